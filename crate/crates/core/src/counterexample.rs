//! A divergence-free-in-cylinders field in `d >= 3` whose trajectories
//! started in a thin slab oscillate between the origin and infinity in
//! finite time.
//!
//! Thin vertical cylinders `E_k` sit on the axes `2^{-k} e_1` and carry the
//! speed `4^k` with alternating sign. Consecutive cylinders are joined at
//! their far ends by tubular handles `F_k` of length less than one, along
//! which the speed ramps from `4^k` to `4^{k+1}`. The handle field also
//! pulls particles onto the handle's centre line, so they enter the next
//! cylinder exactly on its axis.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{ExhaustionDomain, PathSamples};
use crate::error::{FlowError, Result};
use crate::field::{FieldKind, VectorField, VectorFieldSpec};
use crate::integrator::{classify_blowup, integrate, BlowupClass, ExcursionLevels, IntegratorParams, Scheme, Trajectory};
use crate::quadrature::{composite_rule, gauss_legendre, norm, unit_sphere_area, PairwiseSum};
use crate::sampling::RSequence;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CounterexampleParams {
    pub d: usize,
    pub p: f64,
    pub k_max: usize,
    /// Cylinder radii `a_1..a_kmax`; defaults to `8^{-pk/(d-1-p)}`.
    #[serde(default)]
    pub radii: Option<Vec<f64>>,
    /// Length of each straight handle leg.
    #[serde(default = "default_leg")]
    pub handle_leg: f64,
    /// Length scale of the transverse pull toward a handle's centre line.
    #[serde(default = "default_attraction")]
    pub attraction_length: f64,
}

fn default_leg() -> f64 {
    0.3
}

fn default_attraction() -> f64 {
    0.005
}

impl CounterexampleParams {
    pub fn new(d: usize, p: f64, k_max: usize) -> Self {
        Self { d, p, k_max, radii: None, handle_leg: default_leg(), attraction_length: default_attraction() }
    }

    /// Largest admissible radius `8^{-pk/(d-1-p)}`.
    pub fn radius_limit(&self, k: usize) -> f64 {
        8f64.powf(-self.p * k as f64 / (self.d as f64 - 1.0 - self.p))
    }

    pub fn radius(&self, k: usize) -> f64 {
        match &self.radii {
            Some(r) => r[k - 1],
            None => self.radius_limit(k),
        }
    }

    pub fn handle_length(&self, k: usize) -> f64 {
        2.0 * self.handle_leg + PI * 2f64.powi(-(k as i32) - 2)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FlowError::Parameter(m));
        if self.d < 3 {
            return bad(format!("the construction needs d >= 3, got {}", self.d));
        }
        if !(self.p > 1.0) || !(self.p < self.d as f64 - 1.0) {
            return bad(format!("p must lie in (1, d-1) = (1, {}), got {}", self.d - 1, self.p));
        }
        if self.k_max < 3 {
            return bad(format!("k_max must be at least 3, got {}", self.k_max));
        }
        if let Some(r) = &self.radii {
            if r.len() != self.k_max {
                return bad(format!("{} radii given for k_max = {}", r.len(), self.k_max));
            }
        }
        if !(self.handle_leg > 0.0) || self.handle_length(1) >= 1.0 {
            return bad(format!("handle legs of {} give curves of length >= 1", self.handle_leg));
        }
        if !(self.attraction_length > 0.0) {
            return bad("attraction_length must be positive".into());
        }
        for k in 1..=self.k_max {
            let a = self.radius(k);
            if !(a > 0.0) || a > self.radius_limit(k) * (1.0 + 1e-12) || a > 1.0 {
                return bad(format!("a_{k} = {a} exceeds min(1, 8^(-pk/(d-1-p))) = {}", self.radius_limit(k)));
            }
            // keeps E_k clear of the tubes of the neighbouring handles
            if a > 2f64.powi(-(k as i32) - 3) {
                return bad(format!("a_{k} = {a} exceeds 2^(-k-3); cylinders would touch the handles"));
            }
        }
        Ok(())
    }
}

/// `C^∞` step from 0 on `(-∞, 0]` to 1 on `[1, ∞)`.
pub fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        let a = (-1.0 / t).exp();
        let b = (-1.0 / (1.0 - t)).exp();
        a / (a + b)
    }
}

fn smooth_step_derivative(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        0.0
    } else {
        let a = (-1.0 / t).exp();
        let b = (-1.0 / (1.0 - t)).exp();
        a * b * (1.0 / (t * t) + 1.0 / ((1.0 - t) * (1.0 - t))) / ((a + b) * (a + b))
    }
}

/// Radial cutoff: 1 on `[0, 1/2]`, 0 from 1 on, smooth in between.
pub fn cutoff(rho: f64) -> f64 {
    if rho <= 0.5 {
        1.0
    } else {
        1.0 - smooth_step(2.0 * rho - 1.0)
    }
}

pub fn cutoff_derivative(rho: f64) -> f64 {
    -2.0 * smooth_step_derivative(2.0 * rho - 1.0)
}

/// Where a point lies in the construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "part", content = "k")]
pub enum Part {
    /// The feeding cylinder below `E_1`.
    Source,
    Cylinder(usize),
    Handle(usize),
    Outside,
}

#[derive(Clone, Debug, Serialize)]
pub struct CylinderGeometry {
    pub k: usize,
    pub axis_x1: f64,
    pub radius: f64,
    pub z_lo: f64,
    pub z_hi: f64,
    pub sign: f64,
    pub speed: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct HandleGeometry {
    pub k: usize,
    /// Height of the cylinder ends joined by the handle.
    pub z_base: f64,
    /// `+1` if the handle rises above `z_base`, `-1` if it hangs below.
    pub direction: f64,
    pub from_x1: f64,
    pub to_x1: f64,
    pub leg: f64,
    pub arc_center_x1: f64,
    pub arc_radius: f64,
    pub tube_radius: f64,
    pub length: f64,
    pub speed_start: f64,
    pub speed_end: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Geometry {
    pub d: usize,
    pub p: f64,
    pub k_max: usize,
    pub cylinders: Vec<CylinderGeometry>,
    pub handles: Vec<HandleGeometry>,
    pub source: CylinderGeometry,
    pub note: String,
}

impl Geometry {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Projection of a point onto a handle's centre line.
struct HandlePoint {
    s: f64,
    tangent: [f64; 2],
    offset: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct CounterexampleField {
    params: CounterexampleParams,
    cylinders: Vec<CylinderGeometry>,
    handles: Vec<HandleGeometry>,
    kappa: f64,
}

const KAPPA_RAMP: f64 = 0.05;

impl CounterexampleField {
    pub fn new(params: CounterexampleParams) -> Result<Self> {
        params.validate()?;
        let cylinders = (1..=params.k_max).map(|k| cylinder(&params, k)).collect();
        let handles = (1..params.k_max).map(|k| handle(&params, k)).collect();
        let kappa = 1.0 / params.attraction_length;
        Ok(Self { params, cylinders, handles, kappa })
    }

    pub fn params(&self) -> &CounterexampleParams {
        &self.params
    }

    pub fn geometry(&self) -> Geometry {
        let mut source = cylinder(&self.params, 1);
        source.k = 0;
        source.z_hi = -1.0;
        source.z_lo = f64::NEG_INFINITY;
        Geometry {
            d: self.params.d,
            p: self.params.p,
            k_max: self.params.k_max,
            cylinders: self.cylinders.clone(),
            handles: self.handles.clone(),
            source,
            note: format!(
                "finite truncation: the field vanishes past the far end of cylinder {}, which absorbs the flow",
                self.params.k_max
            ),
        }
    }

    fn lateral(&self, x: &[f64], axis: f64) -> f64 {
        let d = self.params.d;
        let mut s = (x[0] - axis) * (x[0] - axis);
        for v in &x[1..d - 1] {
            s += v * v;
        }
        s.sqrt()
    }

    pub fn locate(&self, x: &[f64]) -> Part {
        let z = x[self.params.d - 1];
        for c in &self.cylinders {
            if (x[0] - c.axis_x1).abs() < c.radius && z > c.z_lo && z < c.z_hi && self.lateral(x, c.axis_x1) < c.radius {
                return Part::Cylinder(c.k);
            }
        }
        let c1 = &self.cylinders[0];
        if z <= c1.z_lo && self.lateral(x, c1.axis_x1) < c1.radius {
            return Part::Source;
        }
        for h in &self.handles {
            if self.project(h, x).is_some() {
                return Part::Handle(h.k);
            }
        }
        Part::Outside
    }

    fn project(&self, h: &HandleGeometry, x: &[f64]) -> Option<HandlePoint> {
        let d = self.params.d;
        let z = x[d - 1];
        let u = h.direction;
        let zeta = u * (z - h.z_base);
        if zeta < 0.0 {
            return None;
        }
        let mut other = 0.0;
        for v in &x[1..d - 1] {
            other += v * v;
        }
        if other >= h.tube_radius * h.tube_radius {
            return None;
        }
        let mut offset = vec![0.0; d];
        offset[1..d - 1].copy_from_slice(&x[1..d - 1]);
        let (s, tangent) = if zeta <= h.leg {
            let d1 = x[0] - h.from_x1;
            let d2 = x[0] - h.to_x1;
            if d1.abs() <= d2.abs() {
                offset[0] = d1;
                (zeta, [0.0, u])
            } else {
                offset[0] = d2;
                (h.length - zeta, [0.0, -u])
            }
        } else {
            let dx = x[0] - h.arc_center_x1;
            let dz = zeta - h.leg;
            let r = dx.hypot(dz);
            if r == 0.0 {
                return None;
            }
            let theta = dz.atan2(dx);
            let radial = r - h.arc_radius;
            offset[0] = radial * theta.cos();
            offset[d - 1] = u * radial * theta.sin();
            (h.leg + h.arc_radius * theta, [-theta.sin(), u * theta.cos()])
        };
        if !(0.0..=h.length).contains(&s) || norm(&offset) >= h.tube_radius {
            return None;
        }
        Some(HandlePoint { s, tangent, offset })
    }

    fn handle_speed(h: &HandleGeometry, s: f64) -> f64 {
        h.speed_start + (h.speed_end - h.speed_start) * smooth_step(s / h.length)
    }
}

fn cylinder(params: &CounterexampleParams, k: usize) -> CylinderGeometry {
    let (lo, hi) = if k % 2 == 1 {
        (-(2f64.powi(k as i32 - 1)), 2f64.powi(k as i32))
    } else {
        (-(2f64.powi(k as i32)), 2f64.powi(k as i32 - 1))
    };
    CylinderGeometry {
        k,
        axis_x1: 2f64.powi(-(k as i32)),
        radius: params.radius(k),
        z_lo: lo,
        z_hi: hi,
        sign: if k % 2 == 1 { 1.0 } else { -1.0 },
        speed: 4f64.powi(k as i32),
    }
}

fn handle(params: &CounterexampleParams, k: usize) -> HandleGeometry {
    let up = k % 2 == 1;
    let from = 2f64.powi(-(k as i32));
    let to = 2f64.powi(-(k as i32) - 1);
    HandleGeometry {
        k,
        z_base: if up { 2f64.powi(k as i32) } else { -(2f64.powi(k as i32)) },
        direction: if up { 1.0 } else { -1.0 },
        from_x1: from,
        to_x1: to,
        leg: params.handle_leg,
        arc_center_x1: 0.5 * (from + to),
        arc_radius: 0.5 * (from - to),
        tube_radius: 2f64.powi(-(k as i32) - 3),
        length: params.handle_length(k),
        speed_start: 4f64.powi(k as i32),
        speed_end: 4f64.powi(k as i32 + 1),
    }
}

impl VectorField for CounterexampleField {
    fn dim(&self) -> usize {
        self.params.d
    }

    fn eval(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        let d = self.params.d;
        out.fill(0.0);
        match self.locate(x) {
            Part::Outside => {}
            Part::Source => {
                let c = &self.cylinders[0];
                out[d - 1] = c.speed * cutoff(self.lateral(x, c.axis_x1) / c.radius);
            }
            Part::Cylinder(k) => {
                let c = &self.cylinders[k - 1];
                out[d - 1] = c.sign * c.speed * cutoff(self.lateral(x, c.axis_x1) / c.radius);
            }
            Part::Handle(k) => {
                let h = &self.handles[k - 1];
                let hp = self.project(h, x).expect("located in the handle");
                let speed = Self::handle_speed(h, hp.s);
                let kappa = self.kappa * (hp.s / KAPPA_RAMP).min(1.0);
                let w2: f64 = hp.offset.iter().map(|v| v * v).sum();
                let scale = speed / (1.0 + kappa * kappa * w2).sqrt();
                for (o, w) in out.iter_mut().zip(&hp.offset) {
                    *o = -scale * kappa * w;
                }
                out[0] += scale * hp.tangent[0];
                out[d - 1] += scale * hp.tangent[1];
            }
        }
    }

    fn divergence(&self, _t: f64, x: &[f64]) -> Option<f64> {
        match self.locate(x) {
            Part::Handle(_) => None,
            _ => Some(0.0),
        }
    }
}

/// Builds the field on `[0, horizon]`.
pub fn build_field(params: &CounterexampleParams, horizon: f64) -> Result<VectorFieldSpec> {
    let field = CounterexampleField::new(params.clone())?;
    let spec = VectorFieldSpec::new(Arc::new(field), horizon, FieldKind::Counterexample, "counterexample")?;
    // handle scales; the deeper cylinders are thinner than float spacing
    Ok(spec.with_fd_step(1e-6))
}

/// Integrator settings matched to the construction: the speed cap limits
/// every step to about `attraction_length` of arclength, so the transverse
/// pull contracts offsets by more than half per step and the last rounding
/// lands exactly on the next axis.
pub fn recommended_params(params: &CounterexampleParams, horizon: f64) -> IntegratorParams {
    IntegratorParams {
        scheme: Scheme::Rk45Adaptive,
        dt_init: 1e-5,
        dt_min: 1e-16,
        dt_max: params.attraction_length,
        rel_tol: 1e-9,
        abs_tol: 1e-12,
        speed_cap: Some(1.0),
        horizon,
        blowup_potential_threshold: 1e6,
        max_steps: 2_000_000,
    }
}

/// Uniform samples from `Σ = B_{a_1/2}(e_1/2) × [0, 1]` (a `(d-1)`-ball in
/// the horizontal coordinates times a vertical interval).
pub fn sample_sigma(params: &CounterexampleParams, count: usize) -> Vec<f64> {
    let d = params.d;
    let r = 0.5 * params.radius(1);
    let mut seq = RSequence::new(d);
    let mut out = Vec::with_capacity(count * d);
    while out.len() < count * d {
        let u = seq.next_point();
        let y: Vec<f64> = u[..d - 1].iter().map(|v| 2.0 * v - 1.0).collect();
        if norm(&y) >= 1.0 {
            continue;
        }
        out.push(0.5 + r * y[0]);
        out.extend(y[1..].iter().map(|v| r * v));
        out.push(u[d - 1]);
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct LevelTiming {
    pub k: usize,
    pub cylinder_time: f64,
    /// `2^k / 4^k`
    pub nominal_crossing: f64,
    pub crossing_ratio: f64,
    pub handle_time: Option<f64>,
    /// Handle time in units of `4^{-k}`.
    pub handle_ratio: Option<f64>,
    /// Time at which the particle leaves handle `k` (or cylinder `k_max`).
    pub cumulative: f64,
    /// `Σ_{j<=k} (2·2^j + 1)/4^j`, the per-level bound with a 2× band on
    /// the cylinder crossing.
    pub cumulative_bound: f64,
    /// Farthest `|x|` inside the cylinder.
    pub peak: f64,
    /// Closest approach to the origin inside the cylinder.
    pub trough: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SampleOscillation {
    pub x0: Vec<f64>,
    pub class: BlowupClass,
    /// High crossings of `|x|` that were followed by a return below the
    /// low level.
    pub returned_excursions: usize,
    pub excursions: usize,
    pub total_time: f64,
    pub levels: Vec<LevelTiming>,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct OscillationCensus {
    pub samples: usize,
    pub passing: usize,
    pub pass_fraction: f64,
    pub oscillating: usize,
    pub min_returned_excursions: usize,
    pub max_total_time: f64,
    pub max_handle_ratio: f64,
    pub min_crossing_ratio: f64,
    pub max_crossing_ratio: f64,
    pub levels: ExcursionLevels,
    pub per_sample: Vec<SampleOscillation>,
}

/// Integrates every sample, checks that it stays in the cylinder-handle
/// tube, and records per-level timings and excursions of `|x|`.
pub fn verify_oscillation(
    params: &CounterexampleParams,
    samples: &[f64],
    integ: &IntegratorParams,
    levels: ExcursionLevels,
    total_bound: f64,
) -> Result<OscillationCensus> {
    let field = CounterexampleField::new(params.clone())?;
    let reach = field.kappa * integ.dt_max * integ.speed_cap.unwrap_or(f64::INFINITY);
    if !(0.75..=3.0).contains(&reach) {
        return Err(FlowError::Parameter(format!(
            "dt_max·speed_cap = {} must lie within [0.75, 3]·attraction_length so handles land on the next axis",
            integ.dt_max * integ.speed_cap.unwrap_or(f64::INFINITY)
        )));
    }
    let spec = build_field(params, integ.horizon)?;
    let d = params.d;
    let domain = ExhaustionDomain::whole_space(d, params.k_max + 2);
    let per_sample: Vec<SampleOscillation> = samples
        .par_chunks(d)
        .map(|x0| {
            let traj = integrate(&spec, &domain, x0, integ, 0.0)?;
            analyse(&field, &traj, &domain, levels, total_bound)
        })
        .collect::<Result<_>>()?;

    let passing = per_sample.iter().filter(|s| s.pass).count();
    let all_levels = || per_sample.iter().flat_map(|s| s.levels.iter());
    let ratios = || all_levels().filter(|l| l.k >= 2).map(|l| l.crossing_ratio);
    Ok(OscillationCensus {
        samples: per_sample.len(),
        passing,
        pass_fraction: passing as f64 / per_sample.len().max(1) as f64,
        oscillating: per_sample.iter().filter(|s| s.class == BlowupClass::Oscillating).count(),
        min_returned_excursions: per_sample.iter().map(|s| s.returned_excursions).min().unwrap_or(0),
        max_total_time: per_sample.iter().map(|s| s.total_time).fold(0.0, f64::max),
        max_handle_ratio: all_levels().filter_map(|l| l.handle_ratio).fold(0.0, f64::max),
        min_crossing_ratio: ratios().fold(f64::INFINITY, f64::min),
        max_crossing_ratio: ratios().fold(0.0, f64::max),
        levels,
        per_sample,
    })
}

fn analyse(
    field: &CounterexampleField,
    traj: &Trajectory,
    domain: &ExhaustionDomain,
    levels: ExcursionLevels,
    total_bound: f64,
) -> Result<SampleOscillation> {
    let k_max = field.params.k_max;
    let parts: Vec<Part> = (0..traj.len()).map(|i| field.locate(traj.position(i))).collect();
    // Escape check: leaving the tube is only allowed past the far end of the
    // last cylinder.
    let mut last_inside = Part::Outside;
    for (i, part) in parts.iter().enumerate() {
        match part {
            Part::Outside => {
                if last_inside != Part::Cylinder(k_max) {
                    return Err(FlowError::Geometry(format!(
                        "trajectory from {:?} left the tube after {:?} at t = {}, x = {:?}",
                        traj.initial,
                        last_inside,
                        traj.times[i],
                        traj.position(i)
                    )));
                }
            }
            other => last_inside = *other,
        }
    }

    // Transition times refined on the Hermite interpolant.
    let path: PathSamples<'_> = traj.samples();
    let tol = 1e-13;
    let mut enter: Vec<(Part, f64)> = vec![(parts[0], traj.times[0])];
    for i in 0..parts.len() - 1 {
        if parts[i + 1] != parts[i] {
            let from = parts[i];
            let (t, _) = path.bisect_step(i, tol, |y| field.locate(y) != from);
            enter.push((parts[i + 1], t));
        }
    }
    let leave_time = |p: Part| -> Option<(f64, f64)> {
        let i = enter.iter().position(|(q, _)| *q == p)?;
        let end = enter.get(i + 1).map(|e| e.1)?;
        Some((enter[i].1, end))
    };

    let mut out_levels = Vec::with_capacity(k_max);
    let mut bound = 0.0;
    let mut total_time = traj.final_time();
    let mut ok = true;
    for k in 1..=k_max {
        let Some((t0, t1)) = leave_time(Part::Cylinder(k)) else {
            ok = false;
            break;
        };
        let nominal = 2f64.powi(k as i32) / 4f64.powi(k as i32);
        let (handle_time, cumulative) = if k < k_max {
            match leave_time(Part::Handle(k)) {
                Some((h0, h1)) => (Some(h1 - h0), h1),
                None => {
                    ok = false;
                    (None, t1)
                }
            }
        } else {
            total_time = t1;
            (None, t1)
        };
        bound += (2.0 * 2f64.powi(k as i32) + if k < k_max { 1.0 } else { 0.0 }) / 4f64.powi(k as i32);
        let (mut peak, mut trough) = (0.0f64, f64::INFINITY);
        for (i, part) in parts.iter().enumerate() {
            if *part == Part::Cylinder(k) {
                let r = norm(traj.position(i));
                peak = peak.max(r);
                trough = trough.min(r);
            }
        }
        let ratio = (t1 - t0) / nominal;
        let handle_ratio = handle_time.map(|h| h * 4f64.powi(k as i32));
        ok &= ratio <= 2.0 && (k == 1 || ratio >= 0.5);
        ok &= handle_ratio.is_none_or(|r| r <= 1.1);
        ok &= cumulative <= bound + 1e-9;
        out_levels.push(LevelTiming {
            k,
            cylinder_time: t1 - t0,
            nominal_crossing: nominal,
            crossing_ratio: ratio,
            handle_time,
            handle_ratio,
            cumulative,
            cumulative_bound: bound,
            peak,
            trough,
        });
    }

    let window = traj.len().min(16);
    let class = classify_blowup(traj, domain, window, levels)?;
    let returned = class.excursions.iter().filter(|e| e.t_return.is_some()).count();
    ok &= returned >= 3 && total_time <= total_bound;
    Ok(SampleOscillation {
        x0: traj.initial.clone(),
        class: class.class,
        returned_excursions: returned,
        excursions: class.excursions.len(),
        total_time,
        levels: out_levels,
        pass: ok,
    })
}

/// Quadrature settings for the Sobolev accounting.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct QuadraturePlan {
    /// Gauss–Legendre nodes per axis in the cross-section.
    pub points: usize,
    /// Radial panels for the one-dimensional profile norms.
    pub radial_panels: usize,
}

impl Default for QuadraturePlan {
    fn default() -> Self {
        Self { points: 48, radial_panels: 64 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CylinderNorms {
    pub k: usize,
    pub a_k: f64,
    /// Axial length of `E_k ∩ B_R`.
    pub axial_length: f64,
    /// `‖b‖_{L^p(E_k ∩ B_R)}` by quadrature over the cross-section.
    pub lp: f64,
    /// Separable closed form with the exact axial length.
    pub lp_separable: f64,
    /// `4^k (2R a_k^{d-1})^{1/p} ‖φ‖_p`
    pub lp_bound: f64,
    pub grad_lp: f64,
    pub grad_lp_separable: f64,
    pub grad_lp_bound: f64,
    pub lp_ratio: f64,
    pub grad_ratio: f64,
    /// `‖b‖_{W^{1,p}} = ‖b‖_p + ‖∇b‖_p`
    pub w1p: f64,
    pub w1p_bound: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SobolevReport {
    pub radius: f64,
    pub phi_lp: f64,
    pub grad_phi_lp: f64,
    pub cylinders: Vec<CylinderNorms>,
    pub partial_sums: Vec<f64>,
    /// Ratios of consecutive `W^{1,p}` terms.
    pub term_ratios: Vec<f64>,
    pub geometric: bool,
    /// `|S_kmax − S_{kmax−2}| / S_kmax`
    pub tail: f64,
}

/// `‖φ‖_{L^p(B_1^{d-1})}` and `‖∇φ‖_{L^p(B_1^{d-1})}` by radial quadrature.
pub fn cutoff_norms(d: usize, p: f64, panels: usize) -> (f64, f64) {
    let n = d - 1;
    let area = unit_sphere_area(n);
    let mut v = Vec::new();
    let mut g = Vec::new();
    for (r, w) in composite_rule(0.0, 0.5, panels, 8).into_iter().chain(composite_rule(0.5, 1.0, panels, 8)) {
        let jac = area * r.powi(n as i32 - 1);
        v.push(w * jac * cutoff(r).powf(p));
        g.push(w * jac * cutoff_derivative(r).abs().powf(p));
    }
    (v.pairwise_sum().powf(1.0 / p), g.pairwise_sum().powf(1.0 / p))
}

/// Cross-section integrals of `φ(|y|)^p` and `|φ'(|y|)|^p` over the unit
/// `(n)`-ball on a Cartesian tensor grid, each node weighted by the axial
/// length `ℓ(y)` of the cylinder fibre inside `B_R`.
fn cross_section<F: Fn(&[f64]) -> f64>(n: usize, points: usize, p: f64, fibre: F) -> (f64, f64) {
    let (xs, ws) = gauss_legendre(points);
    let total = points.pow(n as u32);
    let mut idx = vec![0usize; n];
    let mut y = vec![0.0; n];
    let mut v = Vec::with_capacity(total);
    let mut g = Vec::with_capacity(total);
    for _ in 0..total {
        let mut w = 1.0;
        for k in 0..n {
            y[k] = xs[idx[k]];
            w *= ws[idx[k]];
        }
        let r = norm(&y);
        if r < 1.0 {
            let l = fibre(&y);
            v.push(w * l * cutoff(r).powf(p));
            g.push(w * l * cutoff_derivative(r).abs().powf(p));
        }
        for k in 0..n {
            idx[k] += 1;
            if idx[k] < points {
                break;
            }
            idx[k] = 0;
        }
    }
    (v.pairwise_sum(), g.pairwise_sum())
}

/// Per-cylinder `W^{1,p}` norms on `B_R` against their closed-form bounds,
/// and the partial sums of the series.
pub fn estimate_sobolev_norm(params: &CounterexampleParams, radius: f64, plan: QuadraturePlan) -> Result<SobolevReport> {
    params.validate()?;
    let (d, p) = (params.d, params.p);
    let n = d - 1;
    let (phi_lp, grad_phi_lp) = cutoff_norms(d, p, plan.radial_panels);
    let mut cylinders = Vec::with_capacity(params.k_max);
    for k in 1..=params.k_max {
        let c = cylinder(params, k);
        let a = c.radius;
        let speed = c.speed;
        let axial = |lateral2: f64| -> f64 {
            let zr = (radius * radius - lateral2).max(0.0).sqrt();
            (c.z_hi.min(zr) - c.z_lo.max(-zr)).max(0.0)
        };
        let (iv, ig) = cross_section(n, plan.points, p, |y| {
            let mut l2 = (c.axis_x1 + a * y[0]).powi(2);
            for v in &y[1..] {
                l2 += (a * v).powi(2);
            }
            axial(l2)
        });
        let scale = a.powi(n as i32);
        let lp = speed * (iv * scale).powf(1.0 / p);
        let grad_lp = speed / a * (ig * scale).powf(1.0 / p);
        let ell = axial(c.axis_x1 * c.axis_x1);
        let lp_separable = speed * (ell * scale).powf(1.0 / p) * phi_lp;
        let grad_lp_separable = speed / a * (ell * scale).powf(1.0 / p) * grad_phi_lp;
        let lp_bound = speed * (2.0 * radius * scale).powf(1.0 / p) * phi_lp;
        let grad_lp_bound = speed / a * (2.0 * radius * scale).powf(1.0 / p) * grad_phi_lp;
        cylinders.push(CylinderNorms {
            k,
            a_k: a,
            axial_length: ell,
            lp,
            lp_separable,
            lp_bound,
            grad_lp,
            grad_lp_separable,
            grad_lp_bound,
            lp_ratio: lp / lp_bound,
            grad_ratio: grad_lp / grad_lp_bound,
            w1p: lp + grad_lp,
            w1p_bound: lp_bound + grad_lp_bound,
        });
    }
    let mut partial_sums = Vec::with_capacity(cylinders.len());
    let mut s = 0.0;
    for c in &cylinders {
        s += c.w1p;
        partial_sums.push(s);
    }
    let term_ratios: Vec<f64> = cylinders.windows(2).map(|w| w[1].w1p / w[0].w1p).collect();
    let geometric = term_ratios.iter().skip(1).all(|r| *r < 1.0);
    let m = partial_sums.len();
    let tail = (partial_sums[m - 1] - partial_sums[m - 3]).abs() / partial_sums[m - 1];
    Ok(SobolevReport { radius, phi_lp, grad_phi_lp, cylinders, partial_sums, term_ratios, geometric, tail })
}
