//! Runs one experiment and assembles its artifacts in memory.

use anyhow::{bail, Context, Result};
use regflow::counterexample::{
    estimate_sobolev_norm, recommended_params, sample_sigma, verify_oscillation, CounterexampleField, QuadraturePlan,
};
use regflow::diagnostics::{
    check_compression, check_continuity, check_crossing_time, check_hitting_semicontinuity, check_no_blowup,
    check_oscillation, check_proper_blowup, check_semigroup, check_sobolev, check_stability, mollified_flows,
    CheckResult, CheckStatus, DiagnosticsReport, RadialProfile, SemigroupTolerances,
};
use regflow::domain::ExhaustionDomain;
use regflow::field::VectorFieldSpec;
use regflow::integrator::{integrate_jacobian, ExcursionLevels, Recording, RunOptions, Trajectory};
use regflow::transport::{
    continuity_residual, growth_along, measure_compression, push_forward, write_densities_csv, AlivePredicate,
    DensityEstimate, ParticleEnsemble, TestFunction,
};
use regflow::{integrator::integrate, integrator::IntegratorParams};
use serde::Serialize;
use std::sync::Arc;

use crate::config::{ExperimentConfig, ExperimentKind, FieldConfig, LoadedConfig, ProfileMode};

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub tool_version: &'static str,
    pub config_digest: String,
    pub experiment: String,
    pub kind: &'static str,
    pub seed: Option<u64>,
    pub pass: bool,
    pub checks: Vec<CheckResult>,
}

/// Everything a run writes, kept in memory until the run has succeeded.
#[derive(Debug)]
pub struct Artifacts {
    pub report: Report,
    pub files: Vec<(String, Vec<u8>)>,
}

struct Context_<'a> {
    loaded: &'a LoadedConfig,
    field: VectorFieldSpec,
    domain: ExhaustionDomain,
}

impl Context_<'_> {
    fn config(&self) -> &ExperimentConfig {
        &self.loaded.config
    }

    fn params(&self) -> &IntegratorParams {
        &self.loaded.config.integrator
    }

    fn meta(&self) -> [(&'static str, String); 2] {
        [("config_digest", self.loaded.digest.clone()), ("tool_version", TOOL_VERSION.to_string())]
    }

    fn ensemble(&self) -> Result<ParticleEnsemble> {
        let e = self.config().ensemble.as_ref().context("this experiment needs an [ensemble] table")?;
        let sampler = self.loaded.sampler().expect("ensemble present");
        ParticleEnsemble::uniform(&e.region, e.count, e.mass, sampler).context("phase ensemble")
    }
}

pub fn run(loaded: &LoadedConfig) -> Result<Artifacts> {
    let config = &loaded.config;
    let field = config.field.build().context("phase field")?;
    let domain = config.domain.build(field.dim()).context("phase domain")?;
    let cx = Context_ { loaded, field, domain };

    let mut report = DiagnosticsReport::default();
    let mut densities: Vec<DensityEstimate> = Vec::new();
    let mut dumped: Vec<Trajectory> = Vec::new();
    let mut extra: Vec<(String, Vec<u8>)> = Vec::new();
    let p = cx.params();

    match &config.experiment {
        ExperimentKind::Flow { times, grid, jacobian_log_target, jacobian_tol, residual } => {
            let ens = cx.ensemble()?;
            let mut stops = times.clone();
            if let Some(r) = residual {
                stops.extend([r.t - r.dt_fd, r.t, r.t + r.dt_fd, r.t - 0.5 * r.dt_fd, r.t + 0.5 * r.dt_fd]);
            }
            // the Jacobian is reconstructed from every accepted step
            let mut opts = RunOptions::stops(stops);
            if jacobian_log_target.is_some() || config.trajectories.is_some() {
                opts.recording = Recording::Full;
            }
            let trajs = ens.integrate(&cx.field, &cx.domain, p, &opts).context("phase integrate")?;
            let g = grid.build(cx.field.dim())?;
            for &t in times {
                densities.push(push_forward(&ens, &trajs, t, &g, AlivePredicate::MaximalTime).context("phase push-forward")?);
            }
            let mut flow = CheckResult::new("flow");
            let alive = trajs.iter().filter(|t| t.alive_at(p.horizon)).count();
            flow.count("particles", trajs.len()).count("alive_at_horizon", alive);
            if let Some(target) = jacobian_log_target {
                let errs: Vec<f64> = trajs
                    .iter()
                    .filter(|t| t.alive_at(p.horizon))
                    .map(|t| -> Result<f64> {
                        let j = integrate_jacobian(&cx.field, t).context("phase jacobian")?;
                        Ok((j.last().copied().unwrap_or(1.0).ln() - target).abs())
                    })
                    .collect::<Result<_>>()?;
                let worst = errs.iter().copied().fold(0.0, f64::max);
                flow.metric("jacobian_log_error", worst);
                flow.target = Some(*target);
                flow.tolerance = Some(*jacobian_tol);
                flow.verdict(worst <= *jacobian_tol);
            } else {
                flow.verdict(true);
            }
            report.push(flow);
            if let Some(r) = residual {
                let test = TestFunction::new(r.center.clone(), r.radius);
                let coarse = continuity_residual(&ens, &trajs, &cx.field, &test, r.t, r.dt_fd, AlivePredicate::MaximalTime)
                    .context("phase residual")?;
                let fine =
                    continuity_residual(&ens, &trajs, &cx.field, &test, r.t, 0.5 * r.dt_fd, AlivePredicate::MaximalTime)
                        .context("phase residual")?;
                report.push(check_continuity(&coarse, &fine, r.rel_tol, (r.halving_band[0], r.halving_band[1])));
            }
            dumped = take_dump(config, trajs);
        }
        ExperimentKind::Compression { times, grid, bound, target, band, slack } => {
            let ens = cx.ensemble()?;
            let trajs =
                ens.integrate(&cx.field, &cx.domain, p, &RunOptions::stops(times.clone())).context("phase integrate")?;
            let g = grid.build(cx.field.dim())?;
            let alive = match bound.subdomain {
                Some(n) => AlivePredicate::Subdomain(n),
                None => AlivePredicate::MaximalTime,
            };
            let rep = measure_compression(&ens, &trajs, bound, times, &g, alive, *slack).context("phase compression")?;
            let target = target.unwrap_or(rep.c_bound);
            report.push(check_compression(&rep, Some(target), *band, *slack));
            densities = rep.estimates;
            dumped = take_dump(config, trajs);
        }
        ExperimentKind::Semigroup { s, t, points, position_tol, time_tol } => {
            let pts: Vec<f64> = match points {
                Some(list) => list.iter().flatten().copied().collect(),
                None => cx.ensemble()?.points().to_vec(),
            };
            if !pts.len().is_multiple_of(cx.field.dim()) {
                bail!("semigroup points must have dimension {}", cx.field.dim());
            }
            let mut tol = SemigroupTolerances::for_params(p);
            tol.position = *position_tol;
            if let Some(tt) = time_tol {
                tol.blowup_time = *tt;
            }
            report.push(check_semigroup(&cx.field, &cx.domain, &pts, *s, *t, p, tol).context("phase semigroup")?);
        }
        ExperimentKind::Stability {
            epsilons,
            mollifier_points,
            clip,
            level,
            t,
            slack,
            final_bound,
            time_tol,
            lsc_fraction,
        } => {
            let ens = cx.ensemble()?;
            let mut eps = vec![0.0];
            eps.extend(epsilons);
            let flows = mollified_flows(&cx.field, &eps, *mollifier_points, clip, &cx.domain, &ens, p)
                .context("phase mollified flows")?;
            let (reference, approx) = flows.split_first().expect("reference flow");
            report.push(check_stability(&reference.1, approx, ens.weights(), *level, *t, *slack, *final_bound)?);
            report.push(check_hitting_semicontinuity(
                &reference.1,
                approx,
                ens.weights(),
                *level,
                *t,
                *time_tol,
                *lsc_fraction,
            )?);
        }
        ExperimentKind::BlowupCensus { bound, window, high, low, endpoint_tol } => {
            let ens = cx.ensemble()?;
            let trajs = ens.integrate(&cx.field, &cx.domain, p, &RunOptions::default()).context("phase integrate")?;
            let levels = ExcursionLevels { high: *high, low: *low };
            report.push(check_proper_blowup(bound.as_ref(), &cx.domain, &trajs, *window, levels, *endpoint_tol)?);
            dumped = take_dump(config, trajs);
        }
        ExperimentKind::Counterexample { oscillation, sobolev, geometry } => {
            let FieldConfig::Counterexample { params, .. } = &config.field else {
                bail!("counterexample experiment needs the counterexample field");
            };
            if let Some(o) = oscillation {
                let samples = sample_sigma(params, o.samples);
                let census = verify_oscillation(params, &samples, p, ExcursionLevels { high: o.high, low: o.low }, o.total_bound)
                    .context("phase oscillation")?;
                let mut c = check_oscillation(&census, o.min_fraction, o.min_excursions, o.total_bound);
                c.metric("recommended_dt_max", recommended_params(params, p.horizon).dt_max);
                report.push(c);
                extra.push(("oscillation.json".into(), serde_json::to_vec_pretty(&census)?));
            }
            if let Some(s) = sobolev {
                let plan = QuadraturePlan { points: s.points, radial_panels: s.radial_panels };
                let rep = estimate_sobolev_norm(params, s.radius, plan).context("phase sobolev")?;
                report.push(check_sobolev(&rep, s.k_limit, s.tail_tol));
                extra.push(("sobolev.json".into(), serde_json::to_vec_pretty(&rep)?));
            }
            if *geometry {
                let g = CounterexampleField::new(params.clone())?.geometry();
                extra.push(("geometry.json".into(), g.to_json()?.into_bytes()));
            }
            if report.checks.is_empty() {
                bail!("counterexample experiment has neither [experiment.oscillation] nor [experiment.sobolev]");
            }
        }
        ExperimentKind::CrossingTime { radius, profile, angles, tol, tv_control } => {
            let ens = cx.ensemble()?;
            let trajs = ens.integrate(&cx.field, &cx.domain, p, &RunOptions::default()).context("phase integrate")?;
            let prof = match (profile, &config.field) {
                (ProfileMode::Analytic, FieldConfig::Analytic { shape, .. }) => {
                    let shape = shape.clone();
                    RadialProfile::Analytic(Arc::new(move |r| shape.radial_sup(r)))
                }
                _ => RadialProfile::Sampled { angles: *angles, times: vec![0.0] },
            };
            let (check, analysis) =
                check_crossing_time(&cx.field, &trajs, *radius, &prof, *tol, *tv_control).context("phase crossing")?;
            report.push(check);
            extra.push(("crossings.json".into(), serde_json::to_vec_pretty(&analysis)?));
            dumped = take_dump(config, trajs);
        }
        ExperimentKind::NoBlowup { tol_frac, probe, probe_target, probe_tol, expect_violation } => {
            let ens = cx.ensemble()?;
            let trajs = ens.integrate(&cx.field, &cx.domain, p, &RunOptions::default()).context("phase integrate")?;
            let mut c = check_no_blowup(&ens, &trajs, &cx.field, p.horizon, *tol_frac).context("phase growth")?;
            if let Some(x0) = probe {
                let tr = integrate(&cx.field, &cx.domain, x0, p, 0.0).context("phase probe")?;
                let g = growth_along(&cx.field, &tr, &[p.horizon])?[0];
                c.metric("probe_growth", g);
                if let Some(target) = probe_target {
                    c.metric("probe_error", (g - target).abs());
                    if c.status == CheckStatus::Pass && (g - target).abs() > *probe_tol {
                        c.verdict(false);
                    }
                }
            }
            if *expect_violation {
                // the expected outcome is a reported violation, never a pass
                let ok = c.status == CheckStatus::CriterionNotSatisfied;
                c.note("expected outcome: criterion not satisfied");
                report.push(c);
                let mut e = CheckResult::new("no-blowup-refusal");
                e.verdict(ok);
                report.push(e);
            } else {
                report.push(c);
            }
            let g = grid_for(&cx)?;
            if let Some(g) = g {
                densities.push(push_forward(&ens, &trajs, p.horizon, &g, AlivePredicate::MaximalTime)?);
            }
            dumped = take_dump(config, trajs);
        }
    }

    let meta = cx.meta();
    let meta_ref: Vec<(&str, &str)> = meta.iter().map(|(k, v)| (*k, v.as_str())).collect();
    let mut files = Vec::new();
    let mut buf = Vec::new();
    write_densities_csv(&mut buf, &densities, &meta_ref)?;
    files.push(("densities.csv".to_string(), buf));
    if config.trajectories.is_some() {
        files.push(("trajectories.csv".to_string(), trajectories_csv(&dumped, &meta_ref)?));
    }
    for (name, bytes) in extra {
        files.push((name, bytes));
    }
    let pass = report.all_pass();
    let report = Report {
        schema_version: SCHEMA_VERSION,
        tool_version: TOOL_VERSION,
        config_digest: loaded.digest.clone(),
        experiment: config.name.clone(),
        kind: config.experiment.name(),
        seed: config.seed,
        pass,
        checks: report.checks,
    };
    Ok(Artifacts { report, files })
}

/// Grid over the ensemble's bounding box, doubled, for final-time densities.
fn grid_for(cx: &Context_<'_>) -> Result<Option<regflow::transport::Grid>> {
    let Some(e) = &cx.config().ensemble else { return Ok(None) };
    let Some((lo, hi)) = e.region.bounding_box() else { return Ok(None) };
    let lo: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| a - 0.5 * (b - a)).collect();
    let hi: Vec<f64> = hi.iter().zip(&lo).map(|(b, a)| b + 0.25 * (b - a)).collect();
    let cells = vec![if cx.field.dim() <= 2 { 32 } else { 12 }; cx.field.dim()];
    Ok(Some(regflow::transport::Grid::new(lo, hi, cells)?))
}

fn take_dump(config: &ExperimentConfig, mut trajs: Vec<Trajectory>) -> Vec<Trajectory> {
    match &config.trajectories {
        Some(t) => {
            trajs.truncate(t.count);
            trajs
        }
        None => Vec::new(),
    }
}

fn trajectories_csv(trajs: &[Trajectory], meta: &[(&str, &str)]) -> Result<Vec<u8>> {
    let dim = trajs.first().map_or(0, |t| t.dim);
    let mut wr = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["particle".to_string(), "t".to_string()];
    header.extend((1..=dim).map(|k| format!("x_{k}")));
    header.extend((1..=dim).map(|k| format!("v_{k}")));
    header.extend(meta.iter().map(|(k, _)| k.to_string()));
    wr.write_record(&header)?;
    for (p, tr) in trajs.iter().enumerate() {
        for i in 0..tr.len() {
            let mut row = vec![p.to_string(), format!("{}", tr.times[i])];
            row.extend(tr.position(i).iter().map(|v| format!("{v:e}")));
            row.extend(tr.velocity(i).iter().map(|v| format!("{v:e}")));
            row.extend(meta.iter().map(|(_, v)| v.to_string()));
            wr.write_record(&row)?;
        }
    }
    wr.into_inner().map_err(|e| anyhow::anyhow!("csv: {e}"))
}
