use std::sync::Arc;

use regflow::counterexample::{build_field, recommended_params, sample_sigma, CounterexampleParams};
use regflow::diagnostics::{
    check_crossing_time, check_hitting_semicontinuity, check_no_blowup, check_proper_blowup, check_semigroup, check_stability,
    mollified_flows, CheckStatus, RadialProfile, SemigroupTolerances,
};
use regflow::domain::{ExhaustionDomain, Region};
use regflow::field::{AnalyticShape, DivergenceBound, VectorFieldSpec};
use regflow::integrator::{classify_blowup, integrate_ensemble, BlowupClass, ExcursionLevels, IntegratorParams, RunOptions};
use regflow::sampling::{sample_region, Sampler};
use regflow::transport::ParticleEnsemble;

fn analytic(shape: AnalyticShape, horizon: f64) -> VectorFieldSpec {
    VectorFieldSpec::analytic(shape, 2, horizon).unwrap()
}

fn disc_points(count: usize, radius: f64) -> Vec<f64> {
    sample_region(&Region::centered_ball(2, radius), count, Sampler::Lattice).unwrap()
}

#[test]
fn semigroup_of_linear_and_cubic_flows() {
    let dom = ExhaustionDomain::whole_space(2, 6);
    let p = IntegratorParams::adaptive(1.0, 1e-10);
    let lin = analytic(AnalyticShape::Linear { rate: 1.0 }, 1.0);
    let r = check_semigroup(&lin, &dom, &disc_points(1000, 1.0), 0.3, 1.0, &p, SemigroupTolerances::for_params(&p)).unwrap();
    assert!(r.pass);
    assert!(r.metrics["position_defect"] <= 1e-6);

    let cubic = analytic(AnalyticShape::CubicRadial, 1.0);
    let pts = [1.0, 0.0, 0.0, 1.0, 0.6, 0.8];
    let r = check_semigroup(&cubic, &dom, &pts, 0.25, 0.45, &p, SemigroupTolerances::for_params(&p)).unwrap();
    assert!(r.pass, "{:?}", r.notes);
    // blow-up at 1/(2r^2) = 1/2 from the unit circle, restarted a quarter later
    assert!((r.metrics["mean_restarted_duration"] - 0.25).abs() <= 0.01);
    assert!(r.metrics["blowup_time_defect"] <= 0.01);
}

#[test]
fn semigroup_defect_follows_tolerance() {
    let dom = ExhaustionDomain::whole_space(2, 6);
    let f = analytic(AnalyticShape::Saturating, 3.0);
    let pts = disc_points(200, 2.0);
    let defect = |tol: f64| {
        let mut p = IntegratorParams::adaptive(3.0, tol);
        p.abs_tol = tol;
        check_semigroup(&f, &dom, &pts, 1.1, 3.0, &p, SemigroupTolerances::for_params(&p)).unwrap().metrics["position_defect"]
    };
    // restarts replay the original steps, so the defect may already sit at roundoff
    let (coarse, fine) = (defect(1e-5), defect(5e-6));
    assert!(fine <= (0.5 * coarse).max(1e-12), "{coarse} {fine}");
    assert!(coarse <= 1e-6);
}

#[test]
fn stability_on_a_smooth_field() {
    let f = analytic(AnalyticShape::Saturating, 1.0);
    let dom = ExhaustionDomain::ball(vec![0.0, 0.0], 2.0, 3);
    let ens = ParticleEnsemble::uniform(&Region::centered_ball(2, 1.2), 1000, 1.0, Sampler::Lattice).unwrap();
    let p = IntegratorParams::adaptive(1.0, 1e-9);
    let clip = Region::centered_ball(2, 2.0);
    let mut flows = mollified_flows(&f, &[0.0, 0.2, 0.1, 0.05, 0.025], 10, &clip, &dom, &ens, &p).unwrap();
    let reference = flows.remove(0).1;

    let st = check_stability(&reference, &flows, ens.weights(), 0, 0.5, 0.1, 1e-3).unwrap();
    assert!(st.pass, "{:?}", st.series);
    let hit = check_hitting_semicontinuity(&reference, &flows, ens.weights(), 0, 0.5, 0.05, 0.99).unwrap();
    let fr = &hit.series["fraction"];
    assert!(fr[0] <= 0.05 && *fr.last().unwrap() <= 0.01, "{fr:?}");
    assert!(hit.metrics["lsc_fraction"] >= 0.99);

    let same = vec![(0.0, reference.clone())];
    let st = check_stability(&reference, &same, ens.weights(), 0, 0.5, 0.1, 1e-3).unwrap();
    assert_eq!(st.series["l1"], vec![0.0]);
    let hit = check_hitting_semicontinuity(&reference, &same, ens.weights(), 0, 0.5, 0.05, 0.99).unwrap();
    assert_eq!(hit.series["fraction"], vec![0.0]);
}

#[test]
fn proper_blowup_census() {
    let dom = ExhaustionDomain::whole_space(2, 6);
    let p = IntegratorParams::adaptive(1.0, 1e-9);
    let levels = ExcursionLevels { high: 1e3, low: 10.0 };
    let global = DivergenceBound::constant(None, 0.0, 1.0);

    let cubic = analytic(AnalyticShape::CubicRadial, 1.0);
    let trajs = integrate_ensemble(&cubic, &dom, &disc_points(300, 1.5), &p, 0.0, &RunOptions::default()).unwrap();
    let r = check_proper_blowup(Some(&global), &dom, &trajs, 16, levels, 1e-6).unwrap();
    assert!(r.pass);
    assert!(r.counts["blowups"] > 0);
    assert_eq!(r.counts["blowups"], r.counts["proper"]);

    let rot = analytic(AnalyticShape::Rotation, 1.0);
    let trajs = integrate_ensemble(&rot, &dom, &disc_points(50, 1.5), &p, 0.0, &RunOptions::default()).unwrap();
    let r = check_proper_blowup(Some(&global), &dom, &trajs, 4, levels, 1e-6).unwrap();
    assert!(r.pass);
    assert_eq!(r.counts["blowups"], 0);
}

#[test]
fn counterexample_census_is_refused_but_oscillates() {
    let params = CounterexampleParams::new(3, 1.5, 8);
    let field = build_field(&params, 2.5).unwrap();
    let dom = ExhaustionDomain::whole_space(3, 6);
    let integ = recommended_params(&params, 2.5);
    let trajs = integrate_ensemble(&field, &dom, &sample_sigma(&params, 2), &integ, 0.0, &RunOptions::default()).unwrap();
    let levels = ExcursionLevels { high: 8.0, low: 1.0 };
    let local = DivergenceBound::constant(Some(0), 0.0, 2.5);
    for bound in [None, Some(&local)] {
        let r = check_proper_blowup(bound, &dom, &trajs, 16, levels, 1e-6).unwrap();
        assert_eq!(r.status, CheckStatus::PreconditionFailed);
        assert!(!r.pass);
    }
    for tr in &trajs {
        let c = classify_blowup(tr, &dom, 16, levels).unwrap();
        assert_eq!(c.class, BlowupClass::Oscillating);
        assert!(c.excursions.iter().filter(|e| e.t_return.is_some()).count() >= 3);
        assert!(c.excursions.iter().all(|e| e.t_peak < 2.0 && e.t_return.is_none_or(|t| t < 2.0)));
    }
}

fn crossing_flows(f: &VectorFieldSpec) -> Vec<regflow::integrator::Trajectory> {
    let dom = ExhaustionDomain::whole_space(2, 4);
    let mut p = IntegratorParams::adaptive(f.horizon(), 1e-10);
    p.abs_tol = 1e-12;
    integrate_ensemble(f, &dom, &disc_points(100, 0.9), &p, 0.0, &RunOptions::default()).unwrap()
}

#[test]
fn crossing_time_bounds() {
    let radial = analytic(AnalyticShape::RadialConstant { speed: 2.0 }, 3.0);
    let (r, a) = check_crossing_time(&radial, &crossing_flows(&radial), 1.0, &RadialProfile::Analytic(Arc::new(|_| 2.0)), 0.02, false).unwrap();
    assert!(r.pass);
    assert!(a.ratios.iter().all(|q| (q - 1.0).abs() <= 0.02));
    assert!(a.crossings.iter().all(|c| (c.duration - 0.5).abs() <= 1e-6));

    // radial speed 1 crosses in time 1 while f = hypot(1, 3)
    let spiral = analytic(AnalyticShape::Spiral { radial: 1.0, tangential: 3.0 }, 3.0);
    let (r, a) = check_crossing_time(&spiral, &crossing_flows(&spiral), 1.0, &RadialProfile::sampled(), 0.02, true).unwrap();
    assert!(r.pass);
    let expected = 1f64.hypot(3.0);
    assert!(a.ratios.iter().all(|q| (q - expected).abs() <= 1e-3 * expected), "{:?}", &a.ratios[..3]);
    let tv = a.tv_control.unwrap();
    assert!(tv.estimate >= tv.sampled_integral && tv.margin >= 0.0);

    // r/(1+r): crossing takes 1 + ln 2 against ∫_1^2 f = 1 - ln(3/2)
    let sat = analytic(AnalyticShape::Saturating, 4.0);
    let (r, a) = check_crossing_time(&sat, &crossing_flows(&sat), 1.0, &RadialProfile::sampled(), 0.02, false).unwrap();
    assert!(r.pass);
    let exact = (1.0 + 2f64.ln()) * (1.0 - 1.5f64.ln());
    assert!(a.ratios.iter().all(|q| (q - exact).abs() <= 1e-4), "{exact} {:?}", &a.ratios[..3]);
}

#[test]
fn no_blowup_criterion() {
    let dom = ExhaustionDomain::whole_space(2, 6);
    let ens = ParticleEnsemble::uniform(&Region::centered_ball(2, 1.0), 500, 1.0, Sampler::Lattice).unwrap();
    let p = IntegratorParams::adaptive(1.0, 1e-9);
    for shape in [AnalyticShape::Saturating, AnalyticShape::Linear { rate: 1.0 }] {
        let f = analytic(shape, 1.0);
        let trajs = ens.integrate(&f, &dom, &p, &RunOptions::default()).unwrap();
        let r = check_no_blowup(&ens, &trajs, &f, 1.0, 1e-3).unwrap();
        assert!(r.pass);
        assert_eq!(r.counts["blowups"], 0);
        assert!(r.metrics["growth_integral"].is_finite());
    }
    let cubic = analytic(AnalyticShape::CubicRadial, 1.0);
    let trajs = ens.integrate(&cubic, &dom, &p, &RunOptions::default()).unwrap();
    let r = check_no_blowup(&ens, &trajs, &cubic, 1.0, 1e-3).unwrap();
    assert_eq!(r.status, CheckStatus::CriterionNotSatisfied);
    assert!(!r.pass);
}
