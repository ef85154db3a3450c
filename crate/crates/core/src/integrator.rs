//! Single-particle integration up to the maximal existence time, Jacobian
//! along the flow, and blow-up classification.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{first_hitting, hermite, ExhaustionDomain, HittingRecord, PathSamples};
use crate::error::{FlowError, Result};
use crate::field::VectorFieldSpec;
use crate::quadrature::{gauss_legendre, norm, PairwiseSum};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Rk4Fixed,
    Rk45Adaptive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorParams {
    pub scheme: Scheme,
    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_abs_tol")]
    pub abs_tol: f64,
    /// Above this speed the step is shrunk proportionally.
    #[serde(default)]
    pub speed_cap: Option<f64>,
    pub horizon: f64,
    #[serde(default = "default_threshold")]
    pub blowup_potential_threshold: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
}

fn default_rel_tol() -> f64 {
    1e-8
}
fn default_abs_tol() -> f64 {
    1e-10
}
fn default_threshold() -> f64 {
    1e6
}
fn default_max_steps() -> usize {
    5_000_000
}

impl IntegratorParams {
    pub fn adaptive(horizon: f64, tol: f64) -> Self {
        Self {
            scheme: Scheme::Rk45Adaptive,
            dt_init: 1e-3,
            dt_min: 1e-14,
            dt_max: 0.05,
            rel_tol: tol,
            abs_tol: tol * 1e-2,
            speed_cap: None,
            horizon,
            blowup_potential_threshold: default_threshold(),
            max_steps: default_max_steps(),
        }
    }

    pub fn fixed(horizon: f64, dt: f64) -> Self {
        Self {
            scheme: Scheme::Rk4Fixed,
            dt_init: dt,
            dt_min: dt,
            dt_max: dt,
            rel_tol: default_rel_tol(),
            abs_tol: default_abs_tol(),
            speed_cap: None,
            horizon,
            blowup_potential_threshold: default_threshold(),
            max_steps: default_max_steps(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(FlowError::Config(m.to_string()));
        if !(self.dt_min > 0.0 && self.dt_min <= self.dt_init && self.dt_init <= self.dt_max) {
            return bad("step sizes must satisfy 0 < dt_min <= dt_init <= dt_max");
        }
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad("horizon must be positive and finite");
        }
        if matches!(self.speed_cap, Some(c) if !(c > 0.0)) {
            return bad("speed_cap must be positive");
        }
        if !(self.blowup_potential_threshold > 0.0) {
            return bad("blowup_potential_threshold must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    HorizonReached,
    BlowupDeclared,
    StepUnderflow,
}

/// Which accepted steps are stored.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Recording {
    #[default]
    Full,
    /// Only the start, the mandatory stop times and the final state.
    Stops,
}

/// Extra per-run options: mandatory output times and the recording mode.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub stops: Vec<f64>,
    pub recording: Recording,
}

impl RunOptions {
    pub fn stops(stops: Vec<f64>) -> Self {
        Self { stops, recording: Recording::Stops }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub dim: usize,
    pub initial: Vec<f64>,
    pub start_time: f64,
    pub horizon: f64,
    pub times: Vec<f64>,
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
    pub hitting: Vec<HittingRecord>,
    /// Surrogate for the maximal existence time, as an absolute time.
    pub t_max_estimate: f64,
    pub termination: Termination,
    pub jacobian: Option<Vec<f64>>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

#[derive(Serialize)]
struct Sidecar<'a> {
    initial: &'a [f64],
    start_time: f64,
    t_max_estimate: f64,
    termination: Termination,
    hitting: &'a [HittingRecord],
    samples: usize,
    accepted_steps: usize,
    rejected_steps: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn samples(&self) -> PathSamples<'_> {
        PathSamples { dim: self.dim, times: &self.times, positions: &self.positions, velocities: &self.velocities }
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn velocity(&self, i: usize) -> &[f64] {
        &self.velocities[i * self.dim..(i + 1) * self.dim]
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectories always hold the initial sample")
    }

    pub fn final_position(&self) -> &[f64] {
        self.position(self.len() - 1)
    }

    /// Position at `t` by Hermite interpolation of the recorded samples.
    pub fn position_at(&self, t: f64) -> Option<Vec<f64>> {
        self.samples().position_at(t)
    }

    /// Hitting time of level `n` (absolute), `+inf` when never hit.
    pub fn hitting_time(&self, n: usize) -> f64 {
        self.hitting.get(n).map_or(f64::INFINITY, HittingRecord::time_or_inf)
    }

    /// Whether the particle still exists at absolute time `t`.
    pub fn alive_at(&self, t: f64) -> bool {
        self.termination == Termination::HorizonReached || t < self.t_max_estimate
    }

    /// Index of the sample recorded exactly at `t`, if any.
    pub fn sample_index(&self, t: f64) -> Option<usize> {
        self.times.binary_search_by(|a| a.partial_cmp(&t).unwrap()).ok()
    }

    /// CSV with columns `t, x_1..x_d, v_1..v_d` and `J` when available.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim).map(|k| format!("x_{k}")));
        header.extend((1..=self.dim).map(|k| format!("v_{k}")));
        if self.jacobian.is_some() {
            header.push("J".into());
        }
        wr.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![format!("{:e}", self.times[i])];
            row.extend(self.position(i).iter().map(|v| format!("{v:e}")));
            row.extend(self.velocity(i).iter().map(|v| format!("{v:e}")));
            if let Some(j) = &self.jacobian {
                row.push(format!("{:e}", j[i]));
            }
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Termination metadata as JSON.
    pub fn sidecar_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&Sidecar {
            initial: &self.initial,
            start_time: self.start_time,
            t_max_estimate: self.t_max_estimate,
            termination: self.termination,
            hitting: &self.hitting,
            samples: self.len(),
            accepted_steps: self.accepted_steps,
            rejected_steps: self.rejected_steps,
        })?)
    }
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

struct Stepper<'a> {
    field: &'a VectorFieldSpec,
    d: usize,
    k: [Vec<f64>; 7],
    y: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(field: &'a VectorFieldSpec) -> Self {
        let d = field.dim();
        Self { field, d, k: std::array::from_fn(|_| vec![0.0; d]), y: vec![0.0; d] }
    }

    fn stage(&mut self, t: f64, x: &[f64], h: f64, coeffs: &[f64], out: usize) -> Result<()> {
        for i in 0..self.d {
            let mut acc = 0.0;
            for (j, c) in coeffs.iter().enumerate() {
                acc += c * self.k[j][i];
            }
            self.y[i] = x[i] + h * acc;
        }
        let (k, y) = (&mut self.k, &self.y);
        self.field.eval_into(t, y, &mut k[out])
    }

    /// Classical RK4; `v` is `b(t, x)`. Returns the new position.
    fn rk4(&mut self, t: f64, x: &[f64], v: &[f64], h: f64, xn: &mut [f64]) -> Result<()> {
        self.k[0].copy_from_slice(v);
        self.stage(t + 0.5 * h, x, h, &[0.5], 1)?;
        self.stage(t + 0.5 * h, x, h, &[0.0, 0.5], 2)?;
        self.stage(t + h, x, h, &[0.0, 0.0, 1.0], 3)?;
        for i in 0..self.d {
            xn[i] = x[i] + h / 6.0 * (self.k[0][i] + 2.0 * self.k[1][i] + 2.0 * self.k[2][i] + self.k[3][i]);
        }
        Ok(())
    }

    /// Dormand–Prince step; returns the embedded error vector norm and
    /// leaves `b(t + h, xn)` in `k[6]`.
    fn dopri(&mut self, t: f64, x: &[f64], v: &[f64], h: f64, xn: &mut [f64]) -> Result<f64> {
        self.k[0].copy_from_slice(v);
        self.stage(t + C2 * h, x, h, &[A21], 1)?;
        self.stage(t + C3 * h, x, h, &[A31, A32], 2)?;
        self.stage(t + C4 * h, x, h, &[A41, A42, A43], 3)?;
        self.stage(t + C5 * h, x, h, &[A51, A52, A53, A54], 4)?;
        self.stage(t + h, x, h, &[A61, A62, A63, A64, A65], 5)?;
        for i in 0..self.d {
            xn[i] = x[i]
                + h * (B1 * self.k[0][i] + B3 * self.k[2][i] + B4 * self.k[3][i] + B5 * self.k[4][i] + B6 * self.k[5][i]);
        }
        let (k, field) = (&mut self.k, self.field);
        field.eval_into(t + h, xn, &mut k[6])?;
        let mut err2 = 0.0;
        for i in 0..self.d {
            let e = h
                * (E1 * self.k[0][i]
                    + E3 * self.k[2][i]
                    + E4 * self.k[3][i]
                    + E5 * self.k[4][i]
                    + E6 * self.k[5][i]
                    + E7 * self.k[6][i]);
            err2 += e * e;
        }
        Ok(err2.sqrt())
    }
}

/// Integrates from `x0` at time `s0` up to the horizon, a declared blow-up,
/// or step underflow, recording every accepted step.
pub fn integrate(
    field: &VectorFieldSpec,
    domain: &ExhaustionDomain,
    x0: &[f64],
    params: &IntegratorParams,
    s0: f64,
) -> Result<Trajectory> {
    integrate_with(field, domain, x0, params, s0, &RunOptions::default())
}

pub fn integrate_with(
    field: &VectorFieldSpec,
    domain: &ExhaustionDomain,
    x0: &[f64],
    params: &IntegratorParams,
    s0: f64,
    opts: &RunOptions,
) -> Result<Trajectory> {
    params.validate()?;
    let d = field.dim();
    if x0.len() != d || domain.dim() != d {
        return Err(FlowError::Dimension { expected: d, got: x0.len().min(domain.dim()) });
    }
    if x0.iter().any(|v| !v.is_finite()) || !domain.contains(x0) {
        return Err(FlowError::OutsideDomain { x: x0.to_vec() });
    }
    let horizon = params.horizon;
    if !(0.0..horizon).contains(&s0) {
        return Err(FlowError::TimeOutOfRange { t: s0, horizon });
    }
    let mut stops: Vec<f64> = opts.stops.iter().copied().filter(|&s| s > s0 && s <= horizon).collect();
    stops.sort_by(|a, b| a.partial_cmp(b).unwrap());
    stops.dedup();
    let mut next_stop = 0usize;

    let mut t = s0;
    let mut x = x0.to_vec();
    let mut v = vec![0.0; d];
    field.eval_into(t, &x, &mut v)?;

    let mut traj = Trajectory {
        dim: d,
        initial: x0.to_vec(),
        start_time: s0,
        horizon,
        times: vec![t],
        positions: x.clone(),
        velocities: v.clone(),
        hitting: Vec::with_capacity(domain.levels().len()),
        t_max_estimate: horizon,
        termination: Termination::HorizonReached,
        jacobian: None,
        accepted_steps: 0,
        rejected_steps: 0,
    };
    let mut pending: Vec<usize> = Vec::new();
    for (n, level) in domain.levels().iter().enumerate() {
        if level.includes(&x) {
            traj.hitting.push(HittingRecord { level: n, hit_time: None, exit_point: None });
            pending.push(n);
        } else {
            traj.hitting.push(HittingRecord { level: n, hit_time: Some(s0), exit_point: Some(x.clone()) });
        }
    }
    let threshold = params.blowup_potential_threshold;
    if domain.potential_unchecked(&x) >= threshold {
        traj.termination = Termination::BlowupDeclared;
        traj.t_max_estimate = s0;
        return Ok(traj);
    }

    let mut stepper = Stepper::new(field);
    let mut xn = vec![0.0; d];
    let mut vn = vec![0.0; d];
    let mut h_prop = params.dt_init;
    let fixed = params.scheme == Scheme::Rk4Fixed;
    let time_eps = 1e-13 * horizon.max(1.0);

    loop {
        if horizon - t <= time_eps {
            break;
        }
        if traj.accepted_steps + traj.rejected_steps >= params.max_steps {
            traj.termination = Termination::StepUnderflow;
            traj.t_max_estimate = t;
            break;
        }
        let mut cap = params.dt_max;
        if let Some(c) = params.speed_cap {
            let speed = norm(&v);
            if speed > c {
                cap *= c / speed;
            }
        }
        let mut h = if fixed { params.dt_init } else { h_prop }.min(cap);
        let target = stops.get(next_stop).copied().unwrap_or(horizon);
        let mut hits_stop = false;
        if t + h >= target - time_eps {
            h = target - t;
            hits_stop = true;
        }
        if h < params.dt_min && !hits_stop {
            traj.termination = Termination::StepUnderflow;
            traj.t_max_estimate = t;
            break;
        }

        let err = if fixed {
            stepper.rk4(t, &x, &v, h, &mut xn)?;
            0.0
        } else {
            stepper.dopri(t, &x, &v, h, &mut xn)?
        };
        let scale = params.abs_tol.max(params.rel_tol * norm(&x).max(norm(&xn)));
        let ratio = err / scale;
        let left_domain = xn.iter().any(|c| !c.is_finite()) || !domain.contains(&xn);
        if !fixed && (ratio > 1.0 || left_domain) {
            traj.rejected_steps += 1;
            let shrink = if left_domain { 0.25 } else { (0.9 * ratio.powf(-0.2)).clamp(0.1, 0.9) };
            h_prop = h * shrink;
            if h_prop < params.dt_min {
                traj.termination = Termination::StepUnderflow;
                traj.t_max_estimate = t;
                break;
            }
            continue;
        }
        if fixed && left_domain {
            traj.termination = Termination::StepUnderflow;
            traj.t_max_estimate = t;
            break;
        }
        if fixed {
            field.eval_into(t + h, &xn, &mut vn)?;
        } else {
            vn.copy_from_slice(&stepper.k[6]);
            let grow = if ratio == 0.0 { 5.0 } else { (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0) };
            if !hits_stop || h >= h_prop {
                h_prop = h * grow;
            }
        }
        let tn = if hits_stop { target } else { t + h };
        traj.accepted_steps += 1;

        let step_ts = [t, tn];
        let mut step_xs = x.clone();
        step_xs.extend_from_slice(&xn);
        let mut step_vs = v.clone();
        step_vs.extend_from_slice(&vn);
        let step = PathSamples { dim: d, times: &step_ts, positions: &step_xs, velocities: &step_vs };
        let tol = params.dt_min.max(1e-14 * tn.abs());
        pending.retain(|&n| {
            let level = &domain.levels()[n];
            if level.includes(&xn) {
                return true;
            }
            let (th, xh) = step.bisect_step(0, tol, |y| !level.includes(y));
            traj.hitting[n] = HittingRecord { level: n, hit_time: Some(th), exit_point: Some(xh) };
            false
        });

        let blown = domain.potential_unchecked(&xn) >= threshold;
        let record = opts.recording == Recording::Full || hits_stop || blown || horizon - tn <= time_eps;
        if record {
            traj.times.push(tn);
            traj.positions.extend_from_slice(&xn);
            traj.velocities.extend_from_slice(&vn);
        }
        if hits_stop && next_stop < stops.len() {
            next_stop += 1;
        }
        if blown {
            let (tb, _) = step.bisect_step(0, tol, |y| domain.potential_unchecked(y) >= threshold);
            traj.termination = Termination::BlowupDeclared;
            traj.t_max_estimate = tb.min(horizon);
            return Ok(traj);
        }
        t = tn;
        std::mem::swap(&mut x, &mut xn);
        std::mem::swap(&mut v, &mut vn);
    }
    if traj.termination != Termination::HorizonReached && *traj.times.last().unwrap() < t {
        traj.times.push(t);
        traj.positions.extend_from_slice(&x);
        traj.velocities.extend_from_slice(&v);
    }
    Ok(traj)
}

/// Integrates many initial points in parallel. Output order matches input
/// order and each trajectory is independent of scheduling.
pub fn integrate_ensemble(
    field: &VectorFieldSpec,
    domain: &ExhaustionDomain,
    points: &[f64],
    params: &IntegratorParams,
    s0: f64,
    opts: &RunOptions,
) -> Result<Vec<Trajectory>> {
    let d = field.dim();
    points
        .par_chunks(d)
        .map(|x| integrate_with(field, domain, x, params, s0, opts))
        .collect()
}

/// `J(t) = exp(∫ div b(s, X(s)) ds)` at every recorded sample, with the
/// divergence integrated by 5-point Gauss–Legendre on the Hermite
/// interpolant of each step.
pub fn integrate_jacobian(field: &VectorFieldSpec, traj: &Trajectory) -> Result<Vec<f64>> {
    if traj.is_empty() {
        return Err(FlowError::EmptyTrajectory);
    }
    let (gx, gw) = gauss_legendre(5);
    let path = traj.samples();
    let mut log_j = 0.0;
    let mut out = Vec::with_capacity(traj.len());
    out.push(1.0);
    let mut y = vec![0.0; traj.dim];
    for i in 0..traj.len() - 1 {
        let (t0, t1) = (traj.times[i], traj.times[i + 1]);
        let half = 0.5 * (t1 - t0);
        let mut parts = [0.0; 5];
        for (q, (s, w)) in gx.iter().zip(&gw).enumerate() {
            let tq = t0 + half * (s + 1.0);
            path.interpolate_step(i, tq, &mut y);
            parts[q] = w * half * field.divergence(tq, &y)?;
        }
        log_j += parts.pairwise_sum();
        let j = log_j.exp();
        if !(j > 0.0) || !j.is_finite() {
            return Err(FlowError::NonFinite { t: t1, x: traj.position(i + 1).to_vec() });
        }
        out.push(j);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlowupClass {
    Proper,
    Oscillating,
    None,
}

/// Thresholds for excursion counting: a high crossing followed by a dip
/// below `low` is one excursion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcursionLevels {
    pub high: f64,
    pub low: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Excursion {
    pub t_peak: f64,
    pub peak: f64,
    /// First time after the peak at which the potential drops below `low`.
    pub t_return: Option<f64>,
    pub trough: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlowupClassification {
    pub class: BlowupClass,
    pub excursions: Vec<Excursion>,
    /// Trailing-window minima checked for growth.
    pub window_minima: Vec<f64>,
}

/// Classifies a terminated trajectory from its potential history.
///
/// Oscillating: at least two rises above `high` separated by a dip below
/// `low`. Proper: blow-up terminated and the running minima over nested
/// trailing windows increase strictly up to a final value above `high`.
/// A blow-up that shows neither pattern is reported as oscillating, since
/// the limit is not witnessed.
pub fn classify_blowup(
    traj: &Trajectory,
    domain: &ExhaustionDomain,
    window: usize,
    levels: ExcursionLevels,
) -> Result<BlowupClassification> {
    if traj.is_empty() {
        return Err(FlowError::EmptyTrajectory);
    }
    if window > traj.len() || window < 2 {
        return Err(FlowError::Window { window, samples: traj.len() });
    }
    let pot: Vec<f64> = (0..traj.len()).map(|i| domain.potential_unchecked(traj.position(i))).collect();

    let mut excursions: Vec<Excursion> = Vec::new();
    let mut above = false;
    for (i, &p) in pot.iter().enumerate() {
        let t = traj.times[i];
        if !above && p >= levels.high {
            above = true;
            excursions.push(Excursion { t_peak: t, peak: p, t_return: None, trough: None });
        } else if above {
            let e = excursions.last_mut().unwrap();
            if p > e.peak && e.t_return.is_none() {
                e.peak = p;
                e.t_peak = t;
            }
            if p <= levels.low {
                above = false;
                e.t_return = Some(t);
                e.trough = Some(p);
            }
        } else if let Some(e) = excursions.last_mut() {
            if e.trough.is_some_and(|tr| p < tr) {
                e.trough = Some(p);
            }
        }
    }
    let returned = excursions.iter().filter(|e| e.t_return.is_some()).count();

    let n = pot.len();
    let tail = &pot[n - window..];
    let chunks = 4.min(window);
    let minima: Vec<f64> = (0..chunks)
        .map(|c| {
            let start = c * window / chunks;
            tail[start..].iter().copied().fold(f64::INFINITY, f64::min)
        })
        .collect();
    let growing = minima.windows(2).all(|w| w[1] > w[0]) && *tail.last().unwrap() >= levels.high;

    let class = if excursions.len() >= 2 && returned >= 1 {
        BlowupClass::Oscillating
    } else if traj.termination == Termination::HorizonReached {
        BlowupClass::None
    } else if growing {
        BlowupClass::Proper
    } else {
        BlowupClass::Oscillating
    };
    Ok(BlowupClassification { class, excursions, window_minima: minima })
}

/// Hitting record of a level recomputed from the stored samples.
pub fn recompute_hitting(traj: &Trajectory, domain: &ExhaustionDomain, n: usize, tol: f64) -> Result<HittingRecord> {
    let level = domain.level(n).ok_or_else(|| FlowError::Config(format!("no exhaustion level {n}")))?;
    first_hitting(&traj.samples(), level, n, tol)
}

/// Hermite-interpolated position at `t` between samples `i` and `i + 1`.
pub fn interpolate(traj: &Trajectory, i: usize, t: f64) -> Vec<f64> {
    let mut out = vec![0.0; traj.dim];
    hermite(
        traj.times[i],
        traj.times[i + 1],
        traj.position(i),
        traj.velocity(i),
        traj.position(i + 1),
        traj.velocity(i + 1),
        t,
        &mut out,
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::AnalyticShape;
    use crate::domain::Region;

    fn field(shape: AnalyticShape, d: usize, horizon: f64) -> VectorFieldSpec {
        VectorFieldSpec::analytic(shape, d, horizon).unwrap()
    }

    #[test]
    fn exponential_flow_reaches_e() {
        let f = field(AnalyticShape::Linear { rate: 1.0 }, 2, 1.0);
        let dom = ExhaustionDomain::whole_space(2, 4);
        let tr = integrate(&f, &dom, &[0.6, 0.8], &IntegratorParams::adaptive(1.0, 1e-10), 0.0).unwrap();
        assert_eq!(tr.termination, Termination::HorizonReached);
        assert!((norm(tr.final_position()) - std::f64::consts::E).abs() < 1e-6);
        assert_eq!(tr.final_time(), 1.0);
        // B_2 is left at t = ln 2
        assert!((tr.hitting_time(0) - 2f64.ln()).abs() < 1e-6);
        assert!(tr.hitting_time(1).is_infinite());
    }

    #[test]
    fn zero_field_is_stationary() {
        let f = field(AnalyticShape::Zero, 3, 2.0);
        let dom = ExhaustionDomain::whole_space(3, 2);
        let tr = integrate(&f, &dom, &[0.1, 0.2, 0.3], &IntegratorParams::adaptive(2.0, 1e-8), 0.0).unwrap();
        assert_eq!(tr.t_max_estimate, 2.0);
        assert!(tr.positions.chunks(3).all(|p| p == [0.1, 0.2, 0.3]));
    }

    #[test]
    fn cubic_field_blows_up_at_one_half() {
        let f = field(AnalyticShape::CubicRadial, 2, 1.0);
        let dom = ExhaustionDomain::whole_space(2, 8);
        let tr = integrate(&f, &dom, &[1.0, 0.0], &IntegratorParams::adaptive(1.0, 1e-10), 0.0).unwrap();
        assert_eq!(tr.termination, Termination::BlowupDeclared);
        assert!((tr.t_max_estimate - 0.5).abs() < 0.01);
        assert!(dom.potential_unchecked(tr.final_position()) >= 1e6);
        let c = classify_blowup(&tr, &dom, 16, ExcursionLevels { high: 8.0, low: 1.0 }).unwrap();
        assert_eq!(c.class, BlowupClass::Proper);
    }

    #[test]
    fn bounded_domain_exit_is_a_blowup() {
        // constant drift toward the boundary of the unit ball
        let f = field(AnalyticShape::Constant { value: vec![1.0, 0.0] }, 2, 2.0);
        let dom = ExhaustionDomain::ball(vec![0.0, 0.0], 1.0, 6);
        let tr = integrate(&f, &dom, &[0.0, 0.0], &IntegratorParams::adaptive(2.0, 1e-10), 0.0).unwrap();
        assert_ne!(tr.termination, Termination::HorizonReached);
        assert!((tr.t_max_estimate - 1.0).abs() < 1e-4);
        assert!((1.0 - norm(tr.final_position())).abs() < 1e-4);
    }

    #[test]
    fn rotation_is_not_a_blowup() {
        let f = field(AnalyticShape::Rotation, 2, 3.0);
        let dom = ExhaustionDomain::whole_space(2, 3);
        let tr = integrate(&f, &dom, &[1.0, 0.0], &IntegratorParams::adaptive(3.0, 1e-9), 0.0).unwrap();
        let c = classify_blowup(&tr, &dom, 4, ExcursionLevels { high: 8.0, low: 1.0 }).unwrap();
        assert_eq!(c.class, BlowupClass::None);
        assert!(matches!(
            classify_blowup(&tr, &dom, tr.len() + 1, ExcursionLevels { high: 8.0, low: 1.0 }),
            Err(FlowError::Window { .. })
        ));
    }

    #[test]
    fn jacobian_of_linear_fields() {
        let dom = ExhaustionDomain::whole_space(3, 4);
        let f = field(AnalyticShape::Linear { rate: -1.0 }, 3, 1.0);
        let tr = integrate(&f, &dom, &[0.2, 0.1, 0.0], &IntegratorParams::adaptive(1.0, 1e-10), 0.0).unwrap();
        let j = integrate_jacobian(&f, &tr).unwrap();
        assert!((j.last().unwrap() - (-3f64).exp()).abs() < 1e-5);
        let rot = field(AnalyticShape::Rotation, 2, 1.0);
        let tr = integrate(&rot, &ExhaustionDomain::whole_space(2, 2), &[0.5, 0.0], &IntegratorParams::adaptive(1.0, 1e-9), 0.0)
            .unwrap();
        assert!(integrate_jacobian(&rot, &tr).unwrap().iter().all(|j| (j - 1.0).abs() < 1e-6));
    }

    #[test]
    fn stops_are_hit_exactly() {
        let f = field(AnalyticShape::Linear { rate: 1.0 }, 2, 1.0);
        let dom = ExhaustionDomain::whole_space(2, 2);
        let opts = RunOptions::stops(vec![0.25, 0.5, 0.75]);
        let tr = integrate_with(&f, &dom, &[1.0, 0.0], &IntegratorParams::adaptive(1.0, 1e-10), 0.0, &opts).unwrap();
        assert_eq!(tr.times, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!((tr.position(2)[0] - 0.5f64.exp()).abs() < 1e-8);
    }

    #[test]
    fn rejects_bad_starts_and_params() {
        let f = field(AnalyticShape::Zero, 2, 1.0);
        let dom = ExhaustionDomain::ball(vec![0.0, 0.0], 1.0, 2);
        let p = IntegratorParams::adaptive(1.0, 1e-8);
        assert!(matches!(integrate(&f, &dom, &[2.0, 0.0], &p, 0.0), Err(FlowError::OutsideDomain { .. })));
        let mut bad = p.clone();
        bad.dt_min = 1.0;
        assert!(matches!(integrate(&f, &dom, &[0.0, 0.0], &bad, 0.0), Err(FlowError::Config(_))));
        let _ = Region::Whole;
    }

    #[test]
    fn csv_and_sidecar_export() {
        let f = field(AnalyticShape::Linear { rate: 1.0 }, 2, 0.1);
        let dom = ExhaustionDomain::whole_space(2, 2);
        let mut tr = integrate(&f, &dom, &[1.0, 0.0], &IntegratorParams::fixed(0.1, 0.05), 0.0).unwrap();
        tr.jacobian = Some(integrate_jacobian(&f, &tr).unwrap());
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x_1,x_2,v_1,v_2,J\n"));
        assert_eq!(text.lines().count(), 4);
        let js: serde_json::Value = serde_json::from_str(&tr.sidecar_json().unwrap()).unwrap();
        assert_eq!(js["termination"], "horizon-reached");
    }
}
