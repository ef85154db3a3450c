//! Experiment procedures that turn flows into pass/fail checks.
//!
//! Every check returns a [`CheckResult`] with named metrics, the bound or
//! target it is measured against, and a status. Per-particle work runs in
//! parallel; reductions happen in particle order so results do not depend on
//! the thread count.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counterexample::{OscillationCensus, SobolevReport};
use crate::domain::{ExhaustionDomain, Region};
use crate::error::{FlowError, Result};
use crate::field::{mollify, DivergenceBound, MollifierParams, VectorFieldSpec};
use crate::integrator::{
    classify_blowup, integrate_ensemble, integrate_with, BlowupClass, ExcursionLevels, IntegratorParams, RunOptions,
    Termination, Trajectory,
};
use crate::quadrature::{composite_rule, distance, norm, PairwiseSum};
use crate::transport::{log_moment_functionals, AlivePredicate, CompressionReport, ParticleEnsemble, ResidualReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// The hypothesis of the tested statement does not hold for the input.
    CriterionNotSatisfied,
    /// The check refuses to run on this input.
    PreconditionFailed,
    /// Nothing to measure, e.g. no crossings observed.
    Degenerate,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckResult {
    #[serde(rename = "check")]
    pub name: String,
    pub metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub series: BTreeMap<String, Vec<f64>>,
    pub bound: Option<f64>,
    pub target: Option<f64>,
    pub tolerance: Option<f64>,
    pub pass: bool,
    pub status: CheckStatus,
    pub counts: BTreeMap<String, usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    pub wall_clock_ms: f64,
}

impl CheckResult {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            metrics: BTreeMap::new(),
            series: BTreeMap::new(),
            bound: None,
            target: None,
            tolerance: None,
            pass: false,
            status: CheckStatus::Fail,
            counts: BTreeMap::new(),
            notes: Vec::new(),
            wall_clock_ms: 0.0,
        }
    }

    pub fn metric(&mut self, key: &str, value: f64) -> &mut Self {
        self.metrics.insert(key.to_string(), value);
        self
    }

    pub fn count(&mut self, key: &str, value: usize) -> &mut Self {
        self.counts.insert(key.to_string(), value);
        self
    }

    pub fn series(&mut self, key: &str, values: Vec<f64>) -> &mut Self {
        self.series.insert(key.to_string(), values);
        self
    }

    pub fn note(&mut self, note: impl Into<String>) -> &mut Self {
        self.notes.push(note.into());
        self
    }

    pub fn set_status(&mut self, status: CheckStatus) -> &mut Self {
        self.status = status;
        self.pass = status == CheckStatus::Pass;
        self
    }

    /// Pass if `ok`, fail otherwise.
    pub fn verdict(&mut self, ok: bool) -> &mut Self {
        self.set_status(if ok { CheckStatus::Pass } else { CheckStatus::Fail })
    }

    fn timed(mut self, start: Instant) -> Self {
        self.wall_clock_ms = start.elapsed().as_secs_f64() * 1e3;
        self
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub checks: Vec<CheckResult>,
}

impl DiagnosticsReport {
    pub fn push(&mut self, check: CheckResult) {
        self.checks.push(check);
    }

    pub fn all_pass(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemigroupTolerances {
    pub position: f64,
    /// Absolute tolerance on maximal-time estimates.
    pub blowup_time: f64,
}

impl SemigroupTolerances {
    /// Position `1e-6`, times `2·dt_max`.
    pub fn for_params(params: &IntegratorParams) -> Self {
        Self { position: 1e-6, blowup_time: 2.0 * params.dt_max }
    }
}

/// Restarts every sample at `X(s, x)` from time `s` and compares the
/// restarted flow at `t` and its maximal time with the original run.
pub fn check_semigroup(
    field: &VectorFieldSpec,
    domain: &ExhaustionDomain,
    points: &[f64],
    s: f64,
    t: f64,
    params: &IntegratorParams,
    tol: SemigroupTolerances,
) -> Result<CheckResult> {
    let start = Instant::now();
    if !(0.0 <= s && s < t && t <= params.horizon) {
        return Err(FlowError::Config(format!("semigroup needs 0 <= s < t <= T, got s = {s}, t = {t}")));
    }
    let d = field.dim();
    let opts = RunOptions { stops: vec![s, t], ..Default::default() };
    // (position defect if alive at t, (restarted duration, original remaining) if blow-up)
    type Row = (Option<f64>, Option<(f64, f64)>);
    let rows: Vec<Row> = points
        .par_chunks(d)
        .map(|x| -> Result<Row> {
            let first = integrate_with(field, domain, x, params, 0.0, &opts)?;
            if !first.alive_at(s) {
                return Ok((None, None));
            }
            let xs = first.position_at(s).ok_or(FlowError::EmptyTrajectory)?;
            let second = integrate_with(field, domain, &xs, params, s, &RunOptions::stops(vec![t]))?;
            let pos = if first.alive_at(t) && second.alive_at(t) {
                let a = first.position_at(t).ok_or(FlowError::EmptyTrajectory)?;
                let b = second.position_at(t).ok_or(FlowError::EmptyTrajectory)?;
                Some(distance(&a, &b))
            } else if first.alive_at(t) != second.alive_at(t) {
                Some(f64::INFINITY)
            } else {
                None
            };
            // underflow right before the threshold is still a finite maximal time
            let blow = (first.termination != Termination::HorizonReached)
                .then_some((second.t_max_estimate - s, first.t_max_estimate - s));
            Ok((pos, blow))
        })
        .collect::<Result<_>>()?;

    let mut out = CheckResult::new("semigroup");
    let compared: Vec<f64> = rows.iter().filter_map(|r| r.0).collect();
    let blow: Vec<(f64, f64)> = rows.iter().filter_map(|r| r.1).collect();
    let defect = compared.iter().copied().fold(0.0, f64::max);
    let t_defect = blow.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    out.metric("position_defect", defect).metric("blowup_time_defect", t_defect);
    if !blow.is_empty() {
        let n = blow.len() as f64;
        out.metric("mean_restarted_duration", blow.iter().map(|b| b.0).collect::<Vec<_>>().pairwise_sum() / n);
        out.metric("mean_remaining_time", blow.iter().map(|b| b.1).collect::<Vec<_>>().pairwise_sum() / n);
    }
    out.count("samples", rows.len()).count("compared", compared.len()).count("blowups", blow.len());
    out.bound = Some(tol.position);
    out.tolerance = Some(tol.blowup_time);
    out.metric("s", s).metric("t", t);
    if compared.is_empty() && blow.is_empty() {
        out.set_status(CheckStatus::Degenerate);
    } else {
        out.verdict(defect <= tol.position && t_defect <= tol.blowup_time);
    }
    Ok(out.timed(start))
}

/// Flows of mollified fields, one per `ε`; `ε = 0` stands for the field
/// itself.
pub fn mollified_flows(
    field: &VectorFieldSpec,
    epsilons: &[f64],
    mollifier_points: usize,
    clip: &Region,
    domain: &ExhaustionDomain,
    ensemble: &ParticleEnsemble,
    params: &IntegratorParams,
) -> Result<Vec<(f64, Vec<Trajectory>)>> {
    epsilons
        .iter()
        .map(|&eps| {
            let f = if eps == 0.0 {
                field.clone()
            } else {
                mollify(field, &MollifierParams { epsilon: eps, quadrature_points: mollifier_points }, clip)?
            };
            let trajs = integrate_ensemble(&f, domain, ensemble.points(), params, 0.0, &RunOptions::default())?;
            Ok((eps, trajs))
        })
        .collect()
}

/// `max_{s∈[0,t]} |X^n_A(s) − X(s)| ∧ 1`, with the approximate flow stopped
/// at its hitting time of `A = Ω_level`, on a uniform grid of `grid + 1`
/// times plus the hitting time itself.
pub fn stopped_distance(reference: &Trajectory, approx: &Trajectory, level: usize, t: f64, grid: usize) -> f64 {
    let h = approx.hitting_time(level).min(approx.t_max_estimate);
    let mut worst = 0.0f64;
    let mut times: Vec<f64> = (0..=grid).map(|j| t * j as f64 / grid as f64).collect();
    if h < t {
        times.push(h);
    }
    for s in times {
        let (Some(x), Some(y)) = (reference.position_at(s), approx.position_at(s.min(h).min(approx.final_time()))) else {
            return 1.0;
        };
        worst = worst.max(distance(&x, &y));
        if worst >= 1.0 {
            return 1.0;
        }
    }
    worst
}

/// L¹ distance between the stopped approximate flows and the reference on
/// `{h_A(X) > t}`, for each approximation in sequence.
pub fn check_stability(
    reference: &[Trajectory],
    approximations: &[(f64, Vec<Trajectory>)],
    weights: &[f64],
    level: usize,
    t: f64,
    slack: f64,
    final_bound: f64,
) -> Result<CheckResult> {
    let start = Instant::now();
    for (eps, a) in approximations {
        if a.len() != reference.len() || weights.len() != reference.len() {
            return Err(FlowError::Mismatch(format!("approximation eps = {eps} has {} flows", a.len())));
        }
    }
    if approximations.windows(2).any(|w| !(w[1].0 < w[0].0)) {
        return Err(FlowError::Config("epsilons must decrease".into()));
    }
    let keep: Vec<bool> = reference.iter().map(|r| r.hitting_time(level) > t && r.alive_at(t)).collect();
    let mass: f64 = weights.iter().zip(&keep).map(|(w, k)| if *k { *w } else { 0.0 }).collect::<Vec<_>>().pairwise_sum();
    let mut l1 = Vec::with_capacity(approximations.len());
    for (_, approx) in approximations {
        let terms: Vec<f64> = reference
            .par_iter()
            .zip(approx.par_iter())
            .zip(weights.par_iter().zip(keep.par_iter()))
            .map(|((r, a), (w, k))| if *k { w * stopped_distance(r, a, level, t, 200) } else { 0.0 })
            .collect();
        l1.push(terms.pairwise_sum());
    }
    let mut out = CheckResult::new("stability");
    let eps: Vec<f64> = approximations.iter().map(|a| a.0).collect();
    let monotone = l1.windows(2).all(|w| w[1] <= w[0] * (1.0 + slack) + 1e-15);
    let last = l1.last().copied().unwrap_or(f64::NAN);
    out.metric("final_l1", last).metric("set_mass", mass).metric("t", t);
    out.metric("final_mean", if mass > 0.0 { last / mass } else { 0.0 });
    out.count("particles", keep.iter().filter(|k| **k).count());
    out.series("epsilon", eps).series("l1", l1);
    out.bound = Some(final_bound);
    out.tolerance = Some(slack);
    if mass == 0.0 || approximations.is_empty() {
        out.set_status(CheckStatus::Degenerate);
    } else {
        out.verdict(monotone && last <= final_bound);
    }
    Ok(out.timed(start))
}

/// Mass fraction of `{h_A(X^n) ≤ t < h_A(X)}` within `{h_A(X) > t}` per
/// approximation, and a per-particle lower-semicontinuity test against the
/// two finest approximations.
pub fn check_hitting_semicontinuity(
    reference: &[Trajectory],
    approximations: &[(f64, Vec<Trajectory>)],
    weights: &[f64],
    level: usize,
    t: f64,
    time_tol: f64,
    lsc_fraction: f64,
) -> Result<CheckResult> {
    let start = Instant::now();
    let href: Vec<f64> = reference.iter().map(|r| r.hitting_time(level).min(r.t_max_estimate)).collect();
    let mass: f64 = weights.iter().zip(&href).map(|(w, h)| if *h > t { *w } else { 0.0 }).collect::<Vec<_>>().pairwise_sum();
    let mut fractions = Vec::with_capacity(approximations.len());
    for (eps, approx) in approximations {
        if approx.len() != reference.len() {
            return Err(FlowError::Mismatch(format!("approximation eps = {eps} has {} flows", approx.len())));
        }
        let bad: Vec<f64> = approx
            .iter()
            .zip(&href)
            .zip(weights)
            .map(|((a, h), w)| if *h > t && a.hitting_time(level).min(a.t_max_estimate) <= t { *w } else { 0.0 })
            .collect();
        fractions.push(if mass > 0.0 { bad.pairwise_sum() / mass } else { 0.0 });
    }
    let n = approximations.len();
    let lsc_ok = if n >= 2 {
        let good = (0..reference.len())
            .filter(|&i| {
                let m = approximations[n - 2..]
                    .iter()
                    .map(|(_, a)| a[i].hitting_time(level).min(a[i].t_max_estimate))
                    .fold(f64::INFINITY, f64::min);
                href[i] <= m + time_tol
            })
            .count();
        good as f64 / reference.len().max(1) as f64
    } else {
        1.0
    };
    let mut out = CheckResult::new("hitting-semicontinuity");
    let decreasing = fractions.windows(2).all(|w| w[1] <= w[0]);
    out.metric("final_fraction", fractions.last().copied().unwrap_or(0.0));
    out.metric("lsc_fraction", lsc_ok).metric("t", t);
    out.series("epsilon", approximations.iter().map(|a| a.0).collect()).series("fraction", fractions);
    out.count("particles", reference.len());
    out.bound = Some(lsc_fraction);
    out.tolerance = Some(time_tol);
    if mass == 0.0 || approximations.is_empty() {
        out.set_status(CheckStatus::Degenerate);
    } else {
        out.verdict(decreasing && lsc_ok >= lsc_fraction);
    }
    Ok(out.timed(start))
}

/// Classification census of the blow-up trajectories. Refuses to run
/// without a global divergence bound. On bounded domains also checks that
/// blow-ups end within `endpoint_tol` of the boundary.
pub fn check_proper_blowup(
    bound: Option<&DivergenceBound>,
    domain: &ExhaustionDomain,
    trajs: &[Trajectory],
    window: usize,
    levels: ExcursionLevels,
    endpoint_tol: f64,
) -> Result<CheckResult> {
    let start = Instant::now();
    let mut out = CheckResult::new("proper-blowup");
    if !bound.is_some_and(|b| b.is_global()) {
        out.note("needs a divergence bound on the whole domain; only a local bound was declared");
        out.set_status(CheckStatus::PreconditionFailed);
        return Ok(out.timed(start));
    }
    let blown: Vec<&Trajectory> = trajs.iter().filter(|t| t.termination == Termination::BlowupDeclared).collect();
    let classes: Vec<BlowupClass> = blown
        .par_iter()
        .map(|t| Ok(classify_blowup(t, domain, window.min(t.len()).max(2), levels)?.class))
        .collect::<Result<_>>()?;
    let bounded = domain.omega().bounding_box().is_some();
    let endpoint_bad = if bounded {
        blown.iter().filter(|t| domain.omega().dist_to_complement(t.final_position()) > endpoint_tol).count()
    } else {
        0
    };
    let count = |c: BlowupClass| classes.iter().filter(|k| **k == c).count();
    out.count("trajectories", trajs.len()).count("blowups", blown.len());
    out.count("proper", count(BlowupClass::Proper)).count("oscillating", count(BlowupClass::Oscillating));
    out.count("underflow", trajs.iter().filter(|t| t.termination == Termination::StepUnderflow).count());
    out.count("endpoint_violations", endpoint_bad);
    out.metric("blowup_fraction", blown.len() as f64 / trajs.len().max(1) as f64);
    out.target = Some(0.0);
    out.tolerance = Some(endpoint_tol);
    out.verdict(count(BlowupClass::Oscillating) == 0 && endpoint_bad == 0);
    Ok(out.timed(start))
}

/// `r ↦ sup_{∂B_r} |b|` either in closed form or by angular sampling.
#[derive(Clone)]
pub enum RadialProfile {
    Analytic(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
    /// Sampled sup over `angles` equispaced directions at each time in
    /// `times`; a lower bound for the essential sup.
    Sampled { angles: usize, times: Vec<f64> },
}

impl std::fmt::Debug for RadialProfile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RadialProfile::Analytic(_) => write!(f, "Analytic"),
            RadialProfile::Sampled { angles, times } => write!(f, "Sampled({angles}, {times:?})"),
        }
    }
}

impl RadialProfile {
    pub fn sampled() -> Self {
        RadialProfile::Sampled { angles: 720, times: vec![0.0] }
    }

    pub fn eval(&self, field: &VectorFieldSpec, r: f64) -> Result<f64> {
        match self {
            RadialProfile::Analytic(f) => Ok(f(r)),
            RadialProfile::Sampled { angles, times } => {
                let mut v = [0.0; 2];
                let mut sup = 0.0f64;
                for &t in times {
                    for j in 0..*angles {
                        let th = 2.0 * PI * j as f64 / *angles as f64;
                        field.eval_into(t, &[r * th.cos(), r * th.sin()], &mut v)?;
                        sup = sup.max(norm(&v));
                    }
                }
                Ok(sup)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    /// Last time on `∂B_R` before reaching `∂B_{R+1}`.
    pub entry: f64,
    pub exit: f64,
    pub duration: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TvControl {
    /// `(2πR)^{-1} ∫_{B_{R+1}∖B_R} |b| + ∫_{B_{R+1}∖B_R} |∇b|`
    pub estimate: f64,
    pub sampled_integral: f64,
    pub margin: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CrossingAnalysis {
    pub radius: f64,
    pub f_profile: Vec<(f64, f64)>,
    pub f_integral: f64,
    pub crossings: Vec<Crossing>,
    /// `τ · ∫ f` per crossing.
    pub ratios: Vec<f64>,
    /// `σ(t) = max_{s≤t} |γ(s)|` for the first few trajectories.
    pub sigma_traces: Vec<Vec<(f64, f64)>>,
    pub sigma_monotone: bool,
    pub tv_control: Option<TvControl>,
}

/// `∫_R^{R+1} f(r) dr` by composite Gauss–Legendre, with the node values.
pub fn profile_integral(field: &VectorFieldSpec, profile: &RadialProfile, radius: f64) -> Result<(f64, Vec<(f64, f64)>)> {
    let rule = composite_rule(radius, radius + 1.0, 8, 5);
    let mut nodes = Vec::with_capacity(rule.len());
    let mut parts = Vec::with_capacity(rule.len());
    for (r, w) in rule {
        let f = profile.eval(field, r)?;
        nodes.push((r, f));
        parts.push(w * f);
    }
    Ok((parts.pairwise_sum(), nodes))
}

/// Annulus crossings `∂B_R → ∂B_{R+1}` along a fully recorded trajectory.
pub fn annulus_crossings(traj: &Trajectory, radius: f64, tol: f64) -> Vec<Crossing> {
    let path = traj.samples();
    let outer = radius + 1.0;
    let mut out = Vec::new();
    let mut entry: Option<f64> = None;
    for i in 0..traj.len().saturating_sub(1) {
        let (r0, r1) = (norm(traj.position(i)), norm(traj.position(i + 1)));
        if r0 <= radius && r1 > radius {
            entry = Some(path.bisect_step(i, tol, |y| norm(y) > radius).0);
        }
        if let Some(t0) = entry {
            if r0 < outer && r1 >= outer {
                let t1 = path.bisect_step(i, tol, |y| norm(y) >= outer).0;
                out.push(Crossing { entry: t0, exit: t1, duration: t1 - t0 });
                entry = None;
            }
        }
    }
    out
}

/// Polar-quadrature estimate of the total-variation control of the
/// crossing profile, compared with the sampled `∫ f`.
pub fn tv_control(field: &VectorFieldSpec, radius: f64, t: f64, sampled_integral: f64) -> Result<TvControl> {
    let radial = composite_rule(radius, radius + 1.0, 8, 5);
    let angles = 256;
    let h = field.fd_step();
    let mut mass = Vec::new();
    let mut grad = Vec::new();
    let mut v = [0.0; 2];
    for (r, w) in radial {
        for j in 0..angles {
            let th = 2.0 * PI * j as f64 / angles as f64;
            let x = [r * th.cos(), r * th.sin()];
            let dw = w * r * 2.0 * PI / angles as f64;
            field.eval_into(t, &x, &mut v)?;
            mass.push(dw * norm(&v));
            grad.push(dw * norm(&field.fd_gradient(t, &x, h)?));
        }
    }
    let estimate = mass.pairwise_sum() / (2.0 * PI * radius) + grad.pairwise_sum();
    Ok(TvControl { estimate, sampled_integral, margin: estimate - sampled_integral })
}

/// Checks `τ ≥ (∫_R^{R+1} f)^{-1}` on every observed annulus crossing.
pub fn check_crossing_time(
    field: &VectorFieldSpec,
    trajs: &[Trajectory],
    radius: f64,
    profile: &RadialProfile,
    tol: f64,
    with_tv: bool,
) -> Result<(CheckResult, CrossingAnalysis)> {
    let start = Instant::now();
    if field.dim() != 2 {
        return Err(FlowError::Dimension { expected: 2, got: field.dim() });
    }
    let (f_integral, f_profile) = profile_integral(field, profile, radius)?;
    let per: Vec<Vec<Crossing>> = trajs.par_iter().map(|tr| annulus_crossings(tr, radius, 1e-13)).collect();
    let crossings: Vec<Crossing> = per.into_iter().flatten().collect();
    let ratios: Vec<f64> = crossings.iter().map(|c| c.duration * f_integral).collect();
    let mut monotone = true;
    let mut sigma_traces = Vec::new();
    for (k, tr) in trajs.iter().enumerate() {
        let mut sigma = 0.0f64;
        let mut trace = Vec::with_capacity(if k < 8 { tr.len() } else { 0 });
        for i in 0..tr.len() {
            let next = sigma.max(norm(tr.position(i)));
            monotone &= next >= sigma;
            sigma = next;
            if k < 8 {
                trace.push((tr.times[i], sigma));
            }
        }
        if k < 8 {
            sigma_traces.push(trace);
        }
    }
    let tv = if with_tv {
        let sampled = match profile {
            RadialProfile::Sampled { .. } => f_integral,
            RadialProfile::Analytic(_) => profile_integral(field, &RadialProfile::sampled(), radius)?.0,
        };
        Some(tv_control(field, radius, 0.0, sampled)?)
    } else {
        None
    };

    let mut out = CheckResult::new("crossing-time");
    let min_ratio = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    out.metric("f_integral", f_integral).metric("radius", radius);
    out.metric("min_ratio", if ratios.is_empty() { 0.0 } else { min_ratio });
    out.metric("max_ratio", ratios.iter().copied().fold(0.0, f64::max));
    if let Some(tv) = &tv {
        out.metric("tv_estimate", tv.estimate).metric("tv_margin", tv.margin);
    }
    out.count("crossings", crossings.len()).count("trajectories", trajs.len());
    out.target = Some(1.0);
    out.tolerance = Some(tol);
    if crossings.is_empty() {
        out.note("no annulus crossings observed");
        out.set_status(CheckStatus::Degenerate);
    } else {
        let tv_ok = tv.as_ref().is_none_or(|t| t.margin >= 0.0);
        out.verdict(min_ratio >= 1.0 - tol && monotone && tv_ok);
    }
    let analysis = CrossingAnalysis {
        radius,
        f_profile,
        f_integral,
        crossings,
        ratios,
        sigma_traces,
        sigma_monotone: monotone,
        tv_control: tv,
    };
    Ok((out.timed(start), analysis))
}

/// Mass fraction reaching the horizon and the growth integral
/// `∫∫ |b|/(1+|x|) dρ_t dt`. If more than `tol_frac` of the mass blows up
/// the criterion is reported as not satisfied.
pub fn check_no_blowup(
    ensemble: &ParticleEnsemble,
    trajs: &[Trajectory],
    field: &VectorFieldSpec,
    horizon: f64,
    tol_frac: f64,
) -> Result<CheckResult> {
    let start = Instant::now();
    let grid: Vec<f64> = (1..=16).map(|j| horizon * j as f64 / 16.0).collect();
    let report = log_moment_functionals(ensemble, trajs, field, &grid, AlivePredicate::MaximalTime)?;
    let total = ensemble.total_mass();
    let blown: Vec<f64> = ensemble
        .weights()
        .iter()
        .zip(trajs)
        .map(|(w, tr)| if tr.termination == Termination::HorizonReached { 0.0 } else { *w })
        .collect();
    let frac = blown.pairwise_sum() / total;
    let mut out = CheckResult::new("no-blowup");
    out.metric("blowup_mass_fraction", frac);
    out.metric("survivor_fraction", 1.0 - frac);
    out.metric("growth_integral", report.growth_integral);
    out.metric("growth_integral_per_mass", report.growth_integral / total);
    out.series("growth_until", report.growth_until).series("log_moment", report.log_moment);
    out.count("particles", trajs.len());
    out.count("blowups", trajs.iter().filter(|t| t.termination != Termination::HorizonReached).count());
    out.tolerance = Some(tol_frac);
    out.target = Some(1.0);
    if !report.growth_integral.is_finite() {
        out.note("growth integral is not finite");
        out.set_status(CheckStatus::CriterionNotSatisfied);
    } else if frac > tol_frac {
        out.note("more than tol_frac of the mass blows up; the growth criterion does not hold for this field");
        out.set_status(CheckStatus::CriterionNotSatisfied);
    } else {
        out.set_status(CheckStatus::Pass);
    }
    Ok(out.timed(start))
}

/// `C_measured` at the last time within `band` of `target` and below
/// `bound · (1 + slack)` at every time.
pub fn check_compression(report: &CompressionReport, target: Option<f64>, band: f64, slack: f64) -> CheckResult {
    let start = Instant::now();
    let mut out = CheckResult::new("compression");
    let c: Vec<f64> = report.rows.iter().map(|r| r.c_measured).collect();
    let last = c.last().copied().unwrap_or(0.0);
    out.metric("c_bound", report.c_bound).metric("c_final", last);
    out.metric("c_max", c.iter().copied().fold(0.0, f64::max));
    out.series("t", report.rows.iter().map(|r| r.t).collect()).series("c_measured", c.clone());
    out.series("alive_mass", report.rows.iter().map(|r| r.alive_mass).collect());
    out.bound = Some(report.c_bound * (1.0 + slack));
    out.target = target;
    out.tolerance = Some(band);
    out.count("times", c.len());
    if report.rows.iter().any(|r| r.degenerate) {
        out.set_status(CheckStatus::Degenerate);
    } else {
        let in_band = target.is_none_or(|g| (last / g - 1.0).abs() <= band);
        out.verdict(in_band && c.iter().all(|v| *v <= report.c_bound * (1.0 + slack)));
    }
    out.timed(start)
}

/// Residual relative to the flux, and its reduction factor under halving
/// `dt_fd`.
pub fn check_continuity(
    coarse: &ResidualReport,
    fine: &ResidualReport,
    rel_tol: f64,
    band: (f64, f64),
) -> CheckResult {
    let start = Instant::now();
    let mut out = CheckResult::new("continuity-residual");
    let scale = coarse.flux.abs().max(f64::MIN_POSITIVE);
    let rel = coarse.residual / scale;
    let halving = if coarse.residual > 0.0 { fine.residual / coarse.residual } else { 0.0 };
    out.metric("residual", coarse.residual).metric("flux", coarse.flux).metric("relative_residual", rel);
    out.metric("residual_half_step", fine.residual).metric("halving_ratio", halving);
    out.bound = Some(rel_tol);
    out.tolerance = Some(band.1 - band.0);
    for w in coarse.warnings.iter().chain(&fine.warnings) {
        out.note(w.clone());
    }
    if coarse.contaminated || fine.contaminated {
        out.note("residual contaminated by particles dying inside the test support");
    }
    out.verdict(rel <= rel_tol && (band.0..=band.1).contains(&halving));
    out.timed(start)
}

pub fn check_oscillation(census: &OscillationCensus, min_fraction: f64, min_excursions: usize, total_bound: f64) -> CheckResult {
    let start = Instant::now();
    let mut out = CheckResult::new("oscillation");
    out.metric("pass_fraction", census.pass_fraction);
    out.metric("max_total_time", census.max_total_time);
    out.metric("max_handle_ratio", census.max_handle_ratio);
    out.metric("min_crossing_ratio", census.min_crossing_ratio);
    out.metric("max_crossing_ratio", census.max_crossing_ratio);
    out.count("samples", census.samples).count("passing", census.passing).count("oscillating", census.oscillating);
    out.count("min_returned_excursions", census.min_returned_excursions);
    out.bound = Some(total_bound);
    out.target = Some(min_fraction);
    out.note(format!(
        "cylinder crossings take 1.5·2^k/4^k (height 3·2^(k-1)); per-level timings use a 2x band around 2^k/4^k, \
         cumulative bounds sum (2·2^j + 1)/4^j; at least {min_excursions} returned excursions required"
    ));
    out.verdict(census.pass_fraction >= min_fraction && census.max_total_time <= total_bound);
    out.timed(start)
}

pub fn check_sobolev(report: &SobolevReport, k_limit: usize, tail_tol: f64) -> CheckResult {
    let start = Instant::now();
    let mut out = CheckResult::new("sobolev-norm");
    let within: Vec<&_> = report.cylinders.iter().filter(|c| c.k <= k_limit).collect();
    let max_ratio = within.iter().map(|c| c.lp_ratio.max(c.grad_ratio)).fold(0.0, f64::max);
    out.metric("tail", report.tail).metric("max_ratio", max_ratio).metric("radius", report.radius);
    out.metric("phi_lp", report.phi_lp).metric("grad_phi_lp", report.grad_phi_lp);
    out.series("partial_sums", report.partial_sums.clone());
    out.series("term_ratios", report.term_ratios.clone());
    out.series("lp_ratio", report.cylinders.iter().map(|c| c.lp_ratio).collect());
    out.series("grad_ratio", report.cylinders.iter().map(|c| c.grad_ratio).collect());
    out.count("cylinders", report.cylinders.len()).count("geometric", report.geometric as usize);
    out.bound = Some(1.0);
    out.tolerance = Some(tail_tol);
    out.verdict(max_ratio <= 1.0 && report.tail <= tail_tol);
    out.timed(start)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::AnalyticShape;

    #[test]
    fn zero_field_has_no_semigroup_defect() {
        let f = VectorFieldSpec::analytic(AnalyticShape::Zero, 2, 1.0).unwrap();
        let dom = ExhaustionDomain::whole_space(2, 4);
        let p = IntegratorParams::adaptive(1.0, 1e-9);
        let r = check_semigroup(&f, &dom, &[0.1, 0.2, -0.3, 0.4], 0.3, 1.0, &p, SemigroupTolerances::for_params(&p)).unwrap();
        assert_eq!(r.metrics["position_defect"], 0.0);
        assert!(r.pass);
    }

    #[test]
    fn missing_global_bound_is_a_precondition_failure() {
        let dom = ExhaustionDomain::whole_space(2, 4);
        let levels = ExcursionLevels { high: 8.0, low: 1.0 };
        let local = DivergenceBound::constant(Some(1), 0.0, 1.0);
        for b in [None, Some(&local)] {
            let r = check_proper_blowup(b, &dom, &[], 16, levels, 1e-6).unwrap();
            assert_eq!(r.status, CheckStatus::PreconditionFailed);
            assert!(!r.pass);
        }
    }

    #[test]
    fn report_json_uses_check_key() {
        let mut c = CheckResult::new("x");
        c.metric("a", 1.0).verdict(true);
        let v: serde_json::Value = serde_json::to_value(&c).unwrap();
        assert_eq!(v["check"], "x");
        assert_eq!(v["status"], "pass");
    }
}
