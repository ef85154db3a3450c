use proptest::prelude::*;
use regflow::domain::{ExhaustionDomain, Region};
use regflow::field::{AnalyticShape, DivergenceBound, VectorFieldSpec};
use regflow::integrator::{IntegratorParams, RunOptions, Trajectory};
use regflow::sampling::Sampler;
use regflow::transport::{
    continuity_residual, divergence_functional_phi_delta, log_moment_functionals, measure_compression, push_forward,
    AlivePredicate, Grid, ParticleEnsemble, TestFunction,
};

fn analytic(shape: AnalyticShape, horizon: f64) -> VectorFieldSpec {
    VectorFieldSpec::analytic(shape, 2, horizon).unwrap()
}

fn unit_disc(count: usize, mass: f64) -> ParticleEnsemble {
    ParticleEnsemble::uniform(&Region::centered_ball(2, 1.0), count, mass, Sampler::Lattice).unwrap()
}

fn flow(field: &VectorFieldSpec, dom: &ExhaustionDomain, ens: &ParticleEnsemble, tol: f64, stops: Vec<f64>) -> Vec<Trajectory> {
    ens.integrate(field, dom, &IntegratorParams::adaptive(field.horizon(), tol), &RunOptions::stops(stops)).unwrap()
}

fn full_flow(field: &VectorFieldSpec, dom: &ExhaustionDomain, ens: &ParticleEnsemble, tol: f64) -> Vec<Trajectory> {
    ens.integrate(field, dom, &IntegratorParams::adaptive(field.horizon(), tol), &RunOptions::default()).unwrap()
}

#[test]
fn contraction_concentrates_mass() {
    let f = analytic(AnalyticShape::Linear { rate: -1.0 }, 1.0);
    let dom = ExhaustionDomain::whole_space(2, 3);
    let ens = unit_disc(100_000, 1.0);
    let trajs = flow(&f, &dom, &ens, 1e-9, vec![1.0]);
    let grid = Grid::uniform(-1.0, 1.0, 40, 2).unwrap();
    let est = push_forward(&ens, &trajs, 1.0, &grid, AlivePredicate::MaximalTime).unwrap();
    let exact = std::f64::consts::E.powi(2) / std::f64::consts::PI;
    assert!((est.sup_density / exact - 1.0).abs() <= 0.05, "{} vs {exact}", est.sup_density);
    let r = (-1.0f64).exp();
    for i in 0..grid.len() {
        let c = grid.center(i);
        if c[0].hypot(c[1]) > r + 0.05 {
            assert_eq!(est.masses[i], 0.0);
        }
    }
    assert!((est.total_mass() - 1.0).abs() <= 1e-12);
}

#[test]
fn compression_certificates() {
    let dom = ExhaustionDomain::ball(vec![0.0, 0.0], 2.0, 3);
    let ens = unit_disc(40_000, std::f64::consts::PI);
    let grid = Grid::uniform(-2.0, 2.0, 40, 2).unwrap();
    let times = [0.5, 1.0];

    let rot = analytic(AnalyticShape::Rotation, 1.0);
    let trajs = flow(&rot, &dom, &ens, 1e-9, times.to_vec());
    let rep = measure_compression(&ens, &trajs, &DivergenceBound::constant(None, 0.0, 1.0), &times, &grid, AlivePredicate::Subdomain(0), 0.1)
        .unwrap();
    assert_eq!(rep.c_bound, 1.0);
    assert!(rep.rows.iter().all(|r| r.c_measured <= 1.1), "{:?}", rep.rows);
    assert!(!rep.violation);

    let exp = analytic(AnalyticShape::Linear { rate: 0.5 }, 1.0);
    let trajs = flow(&exp, &dom, &ens, 1e-9, times.to_vec());
    let rep = measure_compression(&ens, &trajs, &DivergenceBound::constant(None, 1.0, 1.0), &times, &grid, AlivePredicate::Subdomain(1), 0.1)
        .unwrap();
    assert!((rep.c_bound - 1f64.exp()).abs() < 1e-12);
    assert!(rep.rows.iter().all(|r| r.c_measured <= 1.1), "{:?}", rep.rows);
}

#[test]
fn alive_mass_matches_hitting_times() {
    let f = analytic(AnalyticShape::Linear { rate: 1.0 }, 1.5);
    let dom = ExhaustionDomain::whole_space(2, 3);
    let ens = unit_disc(2_000, 2.0);
    let trajs = full_flow(&f, &dom, &ens, 1e-9);
    for t in [0.0, 0.3, 0.6, 0.9, 1.2, 1.5] {
        for n in 0..3 {
            let direct: f64 = trajs.iter().zip(ens.weights()).filter(|(tr, _)| tr.hitting_time(n) > t).map(|(_, w)| w).sum();
            let reported = ens.alive_mass(&trajs, t, AlivePredicate::Subdomain(n));
            assert!((reported - direct).abs() <= 1e-12 * direct.max(1.0), "t={t} n={n}");
        }
    }
}

fn residual_for(shape: AnalyticShape, test: &TestFunction, t: f64) -> (f64, f64) {
    let f = analytic(shape, 1.0);
    let dom = ExhaustionDomain::whole_space(2, 4);
    let ens = unit_disc(20_000, 1.0);
    let dt = 1e-3;
    let trajs = flow(&f, &dom, &ens, 1e-8, vec![t - dt, t, t + dt]);
    let rep = continuity_residual(&ens, &trajs, &f, test, t, dt, AlivePredicate::MaximalTime).unwrap();
    (rep.residual, rep.flux)
}

#[test]
fn continuity_residual_examples() {
    let bump = TestFunction::new(vec![0.5, 0.2], 0.6);
    let (res, _) = residual_for(AnalyticShape::Zero, &bump, 0.5);
    assert!(res <= 1e-12);

    let radial = TestFunction::new(vec![0.0, 0.0], 0.8);
    let (res, flux) = residual_for(AnalyticShape::Rotation, &radial, 0.5);
    assert!(res <= 1e-8 && flux.abs() <= 1e-8, "{res} {flux}");

    let (res, flux) = residual_for(AnalyticShape::Linear { rate: 1.0 }, &radial, 0.3);
    assert!(res <= 1e-4 * flux.abs(), "{res} {flux}");
}

#[test]
fn growth_integral_of_one_particle() {
    let f = analytic(AnalyticShape::Linear { rate: 1.0 }, 1.0);
    let dom = ExhaustionDomain::whole_space(2, 3);
    let ens = ParticleEnsemble::atoms(2, vec![1.0, 0.0], vec![1.0]).unwrap();
    let trajs = full_flow(&f, &dom, &ens, 1e-10);
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let rep = log_moment_functionals(&ens, &trajs, &f, &grid, AlivePredicate::MaximalTime).unwrap();
    let exact = ((1.0 + std::f64::consts::E) / 2.0).ln();
    assert!((rep.growth_integral - exact).abs() <= 1e-4);
    for (i, t) in grid.iter().enumerate() {
        // integrand e^s/(1+e^s) integrates to log((1+e^t)/2)
        assert!((rep.growth_until[i] - ((1.0 + t.exp()) / 2.0).ln()).abs() <= 1e-6);
        // equality for a radial path, so only roundoff slack
        assert!(rep.log_moment[i] - rep.log_moment[0] <= rep.growth_until[i] + 1e-8);
    }

    let zero = analytic(AnalyticShape::Zero, 1.0);
    let trajs = full_flow(&zero, &dom, &ens, 1e-10);
    assert_eq!(log_moment_functionals(&ens, &trajs, &zero, &grid, AlivePredicate::MaximalTime).unwrap().growth_integral, 0.0);
}

#[test]
fn phi_delta_between_tolerances() {
    let f = analytic(AnalyticShape::Saturating, 1.0);
    let dom = ExhaustionDomain::whole_space(2, 3);
    let ens = unit_disc(500, 1.0);
    let loose = flow(&f, &dom, &ens, 1e-6, vec![1.0]);
    let tight = flow(&f, &dom, &ens, 1e-10, vec![1.0]);
    let phi = divergence_functional_phi_delta(&loose, &tight, ens.weights(), 1e-3, 1.0).unwrap();
    assert!(phi >= 0.0);
    assert!(phi <= ens.total_mass() * (1.0 + 10.0 * 1e4f64).ln());
    assert_eq!(divergence_functional_phi_delta(&tight, &tight, ens.weights(), 1e-3, 1.0).unwrap(), 0.0);
}

#[test]
fn reductions_do_not_depend_on_thread_count() {
    let f = analytic(AnalyticShape::Spiral { radial: 1.0, tangential: 2.0 }, 0.5);
    let dom = ExhaustionDomain::whole_space(2, 3);
    let ens = unit_disc(20_000, 1.0);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
            let trajs = flow(&f, &dom, &ens, 1e-8, vec![0.5]);
            let grid = Grid::uniform(-2.0, 2.0, 30, 2).unwrap();
            let est = push_forward(&ens, &trajs, 0.5, &grid, AlivePredicate::MaximalTime).unwrap();
            let lm = log_moment_functionals(&ens, &trajs, &f, &[0.0, 0.25, 0.5], AlivePredicate::MaximalTime).unwrap();
            (est.masses.iter().map(|m| m.to_bits()).collect::<Vec<_>>(), lm.growth_integral.to_bits(), est.sup_density.to_bits())
        })
    };
    assert_eq!(run(1), run(4));
}

fn translated(shift: f64, count: usize) -> (Vec<Trajectory>, Vec<Trajectory>) {
    let a = analytic(AnalyticShape::Zero, 1.0);
    let b = analytic(AnalyticShape::Constant { value: vec![shift, 0.0] }, 1.0);
    let dom = ExhaustionDomain::whole_space(2, 3);
    let ens = unit_disc(count, 1.0);
    (flow(&a, &dom, &ens, 1e-10, vec![1.0]), flow(&b, &dom, &ens, 1e-10, vec![1.0]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn phi_delta_is_monotone_in_delta(shift in 0.01..1.0f64, d1 in 1e-4..1e-1f64, factor in 1.01..100.0f64) {
        let (a, b) = translated(shift, 50);
        let w = vec![1.0 / 50.0; 50];
        let small = divergence_functional_phi_delta(&a, &b, &w, d1, 1.0).unwrap();
        let large = divergence_functional_phi_delta(&a, &b, &w, d1 * factor, 1.0).unwrap();
        prop_assert!(small >= large);
        // constant separation |v| t
        prop_assert!((small - (1.0 + shift / d1).ln()).abs() <= 1e-8 * small.max(1.0));
    }
}
