//! Time-dependent vector fields `b(t, x)`, their divergence, and one-sided
//! divergence bounds.

mod mollify;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::Region;
use crate::error::{FlowError, Result};
use crate::quadrature::{integrate, norm};
use crate::sampling::{sample_region, Sampler};

pub use mollify::{bump_mass, mollify, KernelRule, MollifiedField, MollifierParams};

/// A pointwise representative of a vector field.
///
/// Implementors must be deterministic and reentrant.
pub trait VectorField: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]);

    /// Analytic divergence where known.
    fn divergence(&self, _t: f64, _x: &[f64]) -> Option<f64> {
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldKind {
    Analytic,
    Counterexample,
    Mollified,
    Composite,
}

/// A field together with its horizon, declared support and kind tag.
/// Evaluation outside the support (boundary included) gives exactly zero.
#[derive(Clone)]
pub struct VectorFieldSpec {
    dim: usize,
    horizon: f64,
    kind: FieldKind,
    support: Option<Region>,
    fd_step: f64,
    label: String,
    inner: Arc<dyn VectorField>,
}

impl fmt::Debug for VectorFieldSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorFieldSpec")
            .field("label", &self.label)
            .field("dim", &self.dim)
            .field("horizon", &self.horizon)
            .field("kind", &self.kind)
            .field("support", &self.support.as_ref().map(|r| r.to_string()))
            .finish()
    }
}

impl VectorFieldSpec {
    pub fn new(inner: Arc<dyn VectorField>, horizon: f64, kind: FieldKind, label: impl Into<String>) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(FlowError::Config(format!("horizon must be positive and finite, got {horizon}")));
        }
        Ok(Self {
            dim: inner.dim(),
            horizon,
            kind,
            support: None,
            fd_step: 1e-4,
            label: label.into(),
            inner,
        })
    }

    pub fn analytic(shape: AnalyticShape, dim: usize, horizon: f64) -> Result<Self> {
        let field = AnalyticField::new(shape, dim)?;
        let label = field.shape.name().to_string();
        Self::new(Arc::new(field), horizon, FieldKind::Analytic, label)
    }

    /// Declares the support; the default finite-difference step becomes
    /// `1e-4` times its diameter.
    pub fn with_support(mut self, support: Region) -> Self {
        if let Some((lo, hi)) = support.bounding_box() {
            let diam = lo.iter().zip(&hi).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt();
            self.fd_step = 1e-4 * diam;
        }
        self.support = Some(support);
        self
    }

    pub fn with_fd_step(mut self, h: f64) -> Self {
        self.fd_step = h;
        self
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn support(&self) -> Option<&Region> {
        self.support.as_ref()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn fd_step(&self) -> f64 {
        self.fd_step
    }

    pub fn inner(&self) -> &Arc<dyn VectorField> {
        &self.inner
    }

    /// Same field with a different horizon.
    pub fn with_horizon(&self, horizon: f64) -> Self {
        Self { horizon, ..self.clone() }
    }

    #[inline]
    fn in_support(&self, x: &[f64]) -> bool {
        self.support.as_ref().is_none_or(|s| s.includes(x))
    }

    /// Hot-path evaluation: zero outside the support, hard error on
    /// non-finite output.
    #[inline]
    pub fn eval_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        if !self.in_support(x) {
            out.fill(0.0);
            return Ok(());
        }
        self.inner.eval(t, x, out);
        if out.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(FlowError::NonFinite { t, x: x.to_vec() })
        }
    }

    /// Checked evaluation at `(t, x)` with `0 <= t <= T`.
    pub fn evaluate(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(FlowError::Dimension { expected: self.dim, got: x.len() });
        }
        if !(0.0..=self.horizon * (1.0 + 1e-12)).contains(&t) {
            return Err(FlowError::TimeOutOfRange { t, horizon: self.horizon });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(FlowError::NonFinite { t, x: x.to_vec() });
        }
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, x, &mut out)?;
        Ok(out)
    }

    pub fn has_analytic_divergence(&self) -> bool {
        self.inner.divergence(0.0, &vec![0.5; self.dim]).is_some()
    }

    /// Divergence: analytic if available (zero outside the support),
    /// otherwise centered finite differences with the default step.
    pub fn divergence(&self, t: f64, x: &[f64]) -> Result<f64> {
        if self.in_support(x) {
            if let Some(d) = self.inner.divergence(t, x) {
                return if d.is_finite() { Ok(d) } else { Err(FlowError::NonFinite { t, x: x.to_vec() }) };
            }
        } else if self.has_analytic_divergence() {
            return Ok(0.0);
        }
        self.fd_divergence(t, x, self.fd_step)
    }

    /// Centered finite-difference divergence with step `h`.
    pub fn fd_divergence(&self, t: f64, x: &[f64], h: f64) -> Result<f64> {
        let d = self.dim;
        let mut y = x.to_vec();
        let mut plus = vec![0.0; d];
        let mut minus = vec![0.0; d];
        let mut div = 0.0;
        for k in 0..d {
            y[k] = x[k] + h;
            self.eval_into(t, &y, &mut plus)?;
            y[k] = x[k] - h;
            self.eval_into(t, &y, &mut minus)?;
            y[k] = x[k];
            div += (plus[k] - minus[k]) / (2.0 * h);
        }
        Ok(div)
    }

    /// Centered finite-difference Jacobian matrix `∂b_i/∂x_j`, row-major.
    pub fn fd_gradient(&self, t: f64, x: &[f64], h: f64) -> Result<Vec<f64>> {
        let d = self.dim;
        let mut y = x.to_vec();
        let mut plus = vec![0.0; d];
        let mut minus = vec![0.0; d];
        let mut g = vec![0.0; d * d];
        for j in 0..d {
            y[j] = x[j] + h;
            self.eval_into(t, &y, &mut plus)?;
            y[j] = x[j] - h;
            self.eval_into(t, &y, &mut minus)?;
            y[j] = x[j];
            for i in 0..d {
                g[i * d + j] = (plus[i] - minus[i]) / (2.0 * h);
            }
        }
        Ok(g)
    }
}

/// Parametric reference fields with closed-form flows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type", deny_unknown_fields)]
pub enum AnalyticShape {
    Zero,
    /// `(-x_2, x_1, 0, ...)`
    Rotation,
    /// `rate · x`
    Linear { rate: f64 },
    /// `x |x|^2`
    CubicRadial,
    /// `x / (1 + |x|)`
    Saturating,
    Constant { value: Vec<f64> },
    /// `speed · x / |x|`
    RadialConstant { speed: f64 },
    /// Planar spiral `c_r x/|x| + c_t x^⊥/|x|`.
    Spiral { radial: f64, tangential: f64 },
    /// Lipschitz shear with a kink: `(drift, shear · |x_1|, 0, ...)`.
    ShearKink { drift: f64, shear: f64 },
}

impl AnalyticShape {
    pub fn name(&self) -> &'static str {
        match self {
            AnalyticShape::Zero => "zero",
            AnalyticShape::Rotation => "rotation",
            AnalyticShape::Linear { .. } => "linear",
            AnalyticShape::CubicRadial => "cubic-radial",
            AnalyticShape::Saturating => "saturating",
            AnalyticShape::Constant { .. } => "constant",
            AnalyticShape::RadialConstant { .. } => "radial-constant",
            AnalyticShape::Spiral { .. } => "spiral",
            AnalyticShape::ShearKink { .. } => "shear-kink",
        }
    }

    /// `sup_{|x| = r} |b(x)|` in closed form.
    pub fn radial_sup(&self, r: f64) -> f64 {
        match self {
            AnalyticShape::Zero => 0.0,
            AnalyticShape::Rotation => r,
            AnalyticShape::Linear { rate } => rate.abs() * r,
            AnalyticShape::CubicRadial => r.powi(3),
            AnalyticShape::Saturating => r / (1.0 + r),
            AnalyticShape::Constant { value } => norm(value),
            AnalyticShape::RadialConstant { speed } => speed.abs(),
            AnalyticShape::Spiral { radial, tangential } => radial.hypot(*tangential),
            AnalyticShape::ShearKink { drift, shear } => drift.hypot(shear * r),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AnalyticField {
    shape: AnalyticShape,
    dim: usize,
}

impl AnalyticField {
    pub fn new(shape: AnalyticShape, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(FlowError::Config("dimension must be positive".into()));
        }
        let needs_plane = matches!(shape, AnalyticShape::Rotation | AnalyticShape::ShearKink { .. });
        if needs_plane && dim < 2 {
            return Err(FlowError::Config(format!("{} needs d >= 2", shape.name())));
        }
        if matches!(shape, AnalyticShape::Spiral { .. }) && dim != 2 {
            return Err(FlowError::Config("spiral is planar".into()));
        }
        if let AnalyticShape::Constant { value } = &shape {
            if value.len() != dim {
                return Err(FlowError::Dimension { expected: dim, got: value.len() });
            }
        }
        Ok(Self { shape, dim })
    }

    pub fn shape(&self) -> &AnalyticShape {
        &self.shape
    }
}

impl VectorField for AnalyticField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        match &self.shape {
            AnalyticShape::Zero => out.fill(0.0),
            AnalyticShape::Rotation => {
                out.fill(0.0);
                out[0] = -x[1];
                out[1] = x[0];
            }
            AnalyticShape::Linear { rate } => {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = rate * v;
                }
            }
            AnalyticShape::CubicRadial => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                for (o, v) in out.iter_mut().zip(x) {
                    *o = v * r2;
                }
            }
            AnalyticShape::Saturating => {
                let s = 1.0 / (1.0 + norm(x));
                for (o, v) in out.iter_mut().zip(x) {
                    *o = v * s;
                }
            }
            AnalyticShape::Constant { value } => out.copy_from_slice(value),
            AnalyticShape::RadialConstant { speed } => {
                let r = norm(x);
                if r == 0.0 {
                    out.fill(0.0);
                } else {
                    for (o, v) in out.iter_mut().zip(x) {
                        *o = speed * v / r;
                    }
                }
            }
            AnalyticShape::Spiral { radial, tangential } => {
                let r = norm(x);
                if r == 0.0 {
                    out.fill(0.0);
                } else {
                    out[0] = (radial * x[0] - tangential * x[1]) / r;
                    out[1] = (radial * x[1] + tangential * x[0]) / r;
                }
            }
            AnalyticShape::ShearKink { drift, shear } => {
                out.fill(0.0);
                out[0] = *drift;
                out[1] = shear * x[0].abs();
            }
        }
    }

    fn divergence(&self, _t: f64, x: &[f64]) -> Option<f64> {
        let d = self.dim as f64;
        Some(match &self.shape {
            AnalyticShape::Zero
            | AnalyticShape::Rotation
            | AnalyticShape::Constant { .. }
            | AnalyticShape::ShearKink { .. } => 0.0,
            AnalyticShape::Linear { rate } => rate * d,
            AnalyticShape::CubicRadial => (d + 2.0) * x.iter().map(|v| v * v).sum::<f64>(),
            AnalyticShape::Saturating => {
                let r = norm(x);
                (d * (1.0 + r) - r) / ((1.0 + r) * (1.0 + r))
            }
            AnalyticShape::RadialConstant { speed } => speed * (d - 1.0) / norm(x),
            AnalyticShape::Spiral { radial, .. } => radial / norm(x),
        })
    }
}

/// Sum of several fields of equal dimension.
#[derive(Clone, Debug)]
pub struct CompositeField {
    parts: Vec<VectorFieldSpec>,
}

impl CompositeField {
    pub fn build(parts: Vec<VectorFieldSpec>, horizon: f64) -> Result<VectorFieldSpec> {
        let dim = parts.first().map(|p| p.dim()).ok_or_else(|| FlowError::Config("empty composite".into()))?;
        if let Some(p) = parts.iter().find(|p| p.dim() != dim) {
            return Err(FlowError::Dimension { expected: dim, got: p.dim() });
        }
        VectorFieldSpec::new(Arc::new(Self { parts }), horizon, FieldKind::Composite, "composite")
    }
}

impl VectorField for CompositeField {
    fn dim(&self) -> usize {
        self.parts[0].dim()
    }

    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let mut buf = vec![0.0; out.len()];
        for p in &self.parts {
            if p.eval_into(t, x, &mut buf).is_err() {
                out.fill(f64::NAN);
                return;
            }
            for (o, b) in out.iter_mut().zip(&buf) {
                *o += b;
            }
        }
    }

    fn divergence(&self, t: f64, x: &[f64]) -> Option<f64> {
        let mut s = 0.0;
        for p in &self.parts {
            if !p.has_analytic_divergence() {
                return None;
            }
            s += p.divergence(t, x).ok()?;
        }
        Some(s)
    }
}

/// One piece of a piecewise-constant lower bound `m(t)`, valid from `from`
/// until the next piece starts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundPiece {
    pub from: f64,
    pub value: f64,
}

/// One-sided bound `div b(t, ·) >= m(t)` on an exhaustion level (or on the
/// whole domain when `subdomain` is `None`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DivergenceBound {
    pub subdomain: Option<usize>,
    pub pieces: Vec<BoundPiece>,
    pub horizon: f64,
}

impl DivergenceBound {
    pub fn constant(subdomain: Option<usize>, m: f64, horizon: f64) -> Self {
        Self { subdomain, pieces: vec![BoundPiece { from: 0.0, value: m }], horizon }
    }

    pub fn piecewise(subdomain: Option<usize>, pieces: Vec<BoundPiece>, horizon: f64) -> Result<Self> {
        if pieces.is_empty() || pieces[0].from != 0.0 {
            return Err(FlowError::Config("divergence bound pieces must start at t = 0".into()));
        }
        if pieces.windows(2).any(|w| !(w[0].from < w[1].from)) || pieces.iter().any(|p| p.from >= horizon) {
            return Err(FlowError::Config("divergence bound breakpoints must increase inside [0, T)".into()));
        }
        Ok(Self { subdomain, pieces, horizon })
    }

    pub fn is_global(&self) -> bool {
        self.subdomain.is_none()
    }

    pub fn m(&self, t: f64) -> f64 {
        let i = self.pieces.partition_point(|p| p.from <= t).max(1);
        self.pieces[i - 1].value
    }

    /// `∫_0^t |m(s)| ds`, integrated piece by piece.
    pub fn l_until(&self, t: f64) -> f64 {
        let t = t.min(self.horizon);
        let mut total = 0.0;
        for (i, p) in self.pieces.iter().enumerate() {
            let end = self.pieces.get(i + 1).map_or(self.horizon, |q| q.from).min(t);
            if end > p.from {
                total += integrate(p.from, end, 1, 2, |s| self.m(s.min(end)).abs());
            }
        }
        total
    }

    /// `L = ∫_0^T |m(t)| dt`.
    pub fn l(&self) -> f64 {
        self.l_until(self.horizon)
    }

    /// Compression constant `e^L`.
    pub fn compression_bound(&self) -> f64 {
        self.l().exp()
    }
}

/// Where to sample `(t, x)` when checking a divergence bound.
#[derive(Clone, Debug)]
pub struct SamplePlan {
    pub region: Region,
    pub points: usize,
    pub times: usize,
    pub tolerance: f64,
    /// Finite-difference step when no analytic divergence is present.
    pub fd_step: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DivergenceViolation {
    pub t: f64,
    pub x: Vec<f64>,
    pub divergence: f64,
    pub m: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DivergenceCheck {
    pub violations: Vec<DivergenceViolation>,
    /// Smallest sampled `div b − m`.
    pub worst_margin: f64,
    pub samples: usize,
}

/// Samples `div b(t, x) − m(t)` over the plan and lists every sample below
/// `−tolerance`.
pub fn verify_divergence_bound(field: &VectorFieldSpec, bound: &DivergenceBound, plan: &SamplePlan) -> Result<DivergenceCheck> {
    let xs = sample_region(&plan.region, plan.points, Sampler::Lattice)?;
    let d = field.dim();
    let times = plan.times.max(1);
    let mut violations = Vec::new();
    let mut worst = f64::INFINITY;
    let mut samples = 0;
    for j in 0..times {
        let t = if times == 1 { 0.0 } else { field.horizon() * j as f64 / (times - 1) as f64 };
        let m = bound.m(t);
        for x in xs.chunks(d) {
            let div = match plan.fd_step {
                Some(h) if !field.has_analytic_divergence() => field.fd_divergence(t, x, h)?,
                _ => field.divergence(t, x)?,
            };
            samples += 1;
            worst = worst.min(div - m);
            if div < m - plan.tolerance {
                violations.push(DivergenceViolation { t, x: x.to_vec(), divergence: div, m });
            }
        }
    }
    Ok(DivergenceCheck { violations, worst_margin: worst, samples })
}
