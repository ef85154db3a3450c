use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{FieldKind, VectorField, VectorFieldSpec};
use crate::domain::Region;
use crate::error::{FlowError, Result};
use crate::quadrature::{gamma, gauss_legendre, unit_sphere_area, PairwiseSum};

/// Mollifier scale and quadrature resolution. The kernel is the bump
/// `(1 − |y|^2)^4` on the unit ball, rescaled to unit mass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MollifierParams {
    pub epsilon: f64,
    #[serde(default = "default_points")]
    pub quadrature_points: usize,
}

fn default_points() -> usize {
    10
}

impl MollifierParams {
    pub fn new(epsilon: f64) -> Self {
        Self { epsilon, quadrature_points: default_points() }
    }
}

/// Exact integral of `(1 − |y|^2)^4` over the unit ball of `R^d`.
pub fn bump_mass(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    unit_sphere_area(d) * 0.5 * gamma(h) * gamma(5.0) / gamma(h + 5.0)
}

/// Quadrature nodes inside the unit ball and unit-mass weights.
#[derive(Clone, Debug)]
pub struct KernelRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// Unnormalized quadrature of the bump, for comparison with `bump_mass`.
    pub raw_mass: f64,
}

impl KernelRule {
    pub fn new(dim: usize, points: usize) -> Result<Self> {
        if points < 2 {
            return Err(FlowError::Config(format!("mollifier needs at least 2 quadrature points per axis, got {points}")));
        }
        let (xs, ws) = gauss_legendre(points);
        let total = points.pow(dim as u32);
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        let mut idx = vec![0usize; dim];
        for _ in 0..total {
            let mut r2 = 0.0;
            let mut w = 1.0;
            for k in 0..dim {
                r2 += xs[idx[k]] * xs[idx[k]];
                w *= ws[idx[k]];
            }
            if r2 < 1.0 {
                nodes.extend(idx.iter().map(|&i| xs[i]));
                weights.push(w * (1.0 - r2).powi(4));
            }
            for k in 0..dim {
                idx[k] += 1;
                if idx[k] < points {
                    break;
                }
                idx[k] = 0;
            }
        }
        let raw_mass = weights.pairwise_sum();
        for w in &mut weights {
            *w /= raw_mass;
        }
        Ok(Self { nodes, weights, raw_mass })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// `b_ε = (b χ_{A^ε}) * ρ_ε`, with `A^ε` the points of `A` at distance
/// more than `ε` from its boundary. The result is supported in `A`.
#[derive(Clone, Debug)]
pub struct MollifiedField {
    base: VectorFieldSpec,
    epsilon: f64,
    clip: Region,
    rule: KernelRule,
}

impl MollifiedField {
    pub fn rule(&self) -> &KernelRule {
        &self.rule
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

impl VectorField for MollifiedField {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let d = x.len();
        out.fill(0.0);
        let mut y = vec![0.0; d];
        let mut v = vec![0.0; d];
        for (node, w) in self.rule.nodes.chunks(d).zip(&self.rule.weights) {
            for k in 0..d {
                y[k] = x[k] - self.epsilon * node[k];
            }
            if self.clip.signed_margin(&y) <= self.epsilon {
                continue;
            }
            if self.base.eval_into(t, &y, &mut v).is_err() {
                out.fill(f64::NAN);
                return;
            }
            for k in 0..d {
                out[k] += w * v[k];
            }
        }
    }
}

/// Mollifies `field` at scale `params.epsilon` after clipping to
/// `clip_domain`.
pub fn mollify(field: &VectorFieldSpec, params: &MollifierParams, clip_domain: &Region) -> Result<VectorFieldSpec> {
    if !(params.epsilon > 0.0) || !params.epsilon.is_finite() {
        return Err(FlowError::Config(format!("mollifier epsilon must be positive, got {}", params.epsilon)));
    }
    clip_domain.validate()?;
    let rule = KernelRule::new(field.dim(), params.quadrature_points)?;
    let inner = MollifiedField { base: field.clone(), epsilon: params.epsilon, clip: clip_domain.clone(), rule };
    let label = format!("{}~eps={}", field.label(), params.epsilon);
    let spec = VectorFieldSpec::new(Arc::new(inner), field.horizon(), FieldKind::Mollified, label)?;
    Ok(match clip_domain {
        Region::Whole => spec,
        other => spec.with_support(other.clone()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::AnalyticShape;
    use approx::assert_relative_eq;

    #[test]
    fn kernel_quadrature_converges_to_exact_mass() {
        assert_relative_eq!(bump_mass(1), 256.0 / 315.0, epsilon = 1e-12);
        for d in [2, 3] {
            let coarse = KernelRule::new(d, 8).unwrap();
            let fine = KernelRule::new(d, 24).unwrap();
            let exact = bump_mass(d);
            assert!((fine.raw_mass - exact).abs() < (coarse.raw_mass - exact).abs() + 1e-15);
            assert!((fine.raw_mass / exact - 1.0).abs() < 1e-3);
            assert_relative_eq!(fine.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
        assert!(matches!(KernelRule::new(2, 1), Err(FlowError::Config(_))));
    }

    #[test]
    fn constants_are_preserved_in_the_interior() {
        let c = VectorFieldSpec::analytic(AnalyticShape::Constant { value: vec![1.5, -2.0] }, 2, 1.0).unwrap();
        let m = mollify(&c, &MollifierParams::new(0.1), &Region::centered_ball(2, 1.0)).unwrap();
        let v = m.evaluate(0.0, &[0.2, 0.3]).unwrap();
        assert_relative_eq!(v[0], 1.5, epsilon = 1e-12);
        assert_relative_eq!(v[1], -2.0, epsilon = 1e-12);
        // supported in the clip domain
        assert!(m.evaluate(0.0, &[0.99, 0.0]).unwrap()[0].abs() < 1e-3);
        assert_eq!(m.evaluate(0.0, &[1.5, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn linear_fields_are_reproduced() {
        // symmetric kernel: exact for affine fields
        let lin = VectorFieldSpec::analytic(AnalyticShape::Linear { rate: 2.0 }, 3, 1.0).unwrap();
        let m = mollify(&lin, &MollifierParams::new(0.05), &Region::Whole).unwrap();
        let x = [0.1, 0.2, -0.3];
        let v = m.evaluate(0.0, &x).unwrap();
        for k in 0..3 {
            assert_relative_eq!(v[k], 2.0 * x[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_epsilon_is_rejected() {
        let z = VectorFieldSpec::analytic(AnalyticShape::Zero, 2, 1.0).unwrap();
        assert!(mollify(&z, &MollifierParams::new(0.0), &Region::Whole).is_err());
    }
}
