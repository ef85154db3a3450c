//! Deterministic low-discrepancy and seeded pseudo-random point sets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::Region;
use crate::error::{FlowError, Result};

/// Additive recurrence `x_n = frac(1/2 + n·alpha)` with `alpha_i = phi_d^{-i}`,
/// where `phi_d` is the real root of `x^{d+1} = x + 1`.
#[derive(Clone, Debug)]
pub struct RSequence {
    alpha: Vec<f64>,
    index: u64,
}

impl RSequence {
    pub fn new(dim: usize) -> Self {
        let mut phi = 2.0f64;
        for _ in 0..64 {
            phi = (1.0 + phi).powf(1.0 / (dim as f64 + 1.0));
        }
        let alpha = (1..=dim).map(|i| phi.powi(-(i as i32)).fract()).collect();
        Self { alpha, index: 0 }
    }

    pub fn next_point(&mut self) -> Vec<f64> {
        self.index += 1;
        let n = self.index as f64;
        self.alpha.iter().map(|a| (0.5 + n * a).fract()).collect()
    }
}

/// How initial points are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum Sampler {
    #[default]
    Lattice,
    Random { seed: u64 },
}

/// Draws `count` points uniformly from a bounded region by rejection from
/// its bounding box. Returns a flat `count * dim` buffer.
pub fn sample_region(region: &Region, count: usize, sampler: Sampler) -> Result<Vec<f64>> {
    let (lo, hi) = region
        .bounding_box()
        .ok_or_else(|| FlowError::Config(format!("cannot sample the unbounded region {region}")))?;
    let dim = lo.len();
    let mut out = Vec::with_capacity(count * dim);
    let mut lattice = RSequence::new(dim);
    let mut rng = match sampler {
        Sampler::Random { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Sampler::Lattice => None,
    };
    let mut tries = 0usize;
    let cap = count.saturating_mul(1000).max(10_000);
    let mut p = vec![0.0; dim];
    while out.len() < count * dim {
        tries += 1;
        if tries > cap {
            return Err(FlowError::Config(format!("rejection sampling of {region} is too inefficient")));
        }
        match rng.as_mut() {
            Some(r) => {
                for k in 0..dim {
                    p[k] = lo[k] + (hi[k] - lo[k]) * r.gen::<f64>();
                }
            }
            None => {
                let u = lattice.next_point();
                for k in 0..dim {
                    p[k] = lo[k] + (hi[k] - lo[k]) * u[k];
                }
            }
        }
        if region.includes(&p) {
            out.extend_from_slice(&p);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_is_equidistributed() {
        let mut s = RSequence::new(2);
        let n = 20_000;
        let mut quad = [0usize; 4];
        for _ in 0..n {
            let p = s.next_point();
            assert!(p.iter().all(|v| (0.0..1.0).contains(v)));
            quad[(p[0] >= 0.5) as usize * 2 + (p[1] >= 0.5) as usize] += 1;
        }
        for q in quad {
            assert!((q as f64 / n as f64 - 0.25).abs() < 1e-3);
        }
    }

    #[test]
    fn samples_fall_in_region_and_are_reproducible() {
        let ball = Region::centered_ball(3, 1.5);
        for sampler in [Sampler::Lattice, Sampler::Random { seed: 9 }] {
            let a = sample_region(&ball, 500, sampler).unwrap();
            let b = sample_region(&ball, 500, sampler).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.len(), 1500);
            assert!(a.chunks(3).all(|p| ball.includes(p)));
        }
        assert!(sample_region(&Region::Whole, 1, Sampler::Lattice).is_err());
    }
}
