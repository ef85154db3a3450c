//! Push-forward of particle ensembles, histogram densities, compression
//! measurements, weak continuity residuals and the log-moment functionals.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{ExhaustionDomain, Region};
use crate::error::{FlowError, Result};
use crate::field::{DivergenceBound, VectorFieldSpec};
use crate::integrator::{integrate_ensemble, IntegratorParams, RunOptions, Trajectory};
use crate::quadrature::{distance, dot, gauss_legendre, norm, PairwiseSum};
use crate::sampling::{sample_region, Sampler};

/// Description of the initial measure `μ_0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum InitialMeasure {
    Uniform { region: Region, mass: f64 },
    Density { region: Region, sup: f64 },
    Atoms,
}

/// Weighted particles approximating `μ_0`. Weights never change; survival
/// is decided per time from the trajectories.
#[derive(Clone, Debug)]
pub struct ParticleEnsemble {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
    measure: InitialMeasure,
}

/// Which particles count as present at time `t`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type", content = "level")]
pub enum AlivePredicate {
    /// `T_{Ω,X}(x) > t`
    MaximalTime,
    /// `h_{Ω_n}(x) > t`
    Subdomain(usize),
}

impl AlivePredicate {
    #[inline]
    pub fn holds(&self, traj: &Trajectory, t: f64) -> bool {
        match *self {
            AlivePredicate::MaximalTime => traj.alive_at(t),
            AlivePredicate::Subdomain(n) => traj.alive_at(t) && traj.hitting_time(n) > t,
        }
    }
}

impl ParticleEnsemble {
    /// Uniform measure of total `mass` on a bounded region.
    pub fn uniform(region: &Region, count: usize, mass: f64, sampler: Sampler) -> Result<Self> {
        if count == 0 || !(mass > 0.0) {
            return Err(FlowError::Config("an ensemble needs positive count and mass".into()));
        }
        let dim = region.dim().ok_or_else(|| FlowError::Config("uniform measure needs a bounded region".into()))?;
        let points = sample_region(region, count, sampler)?;
        let weights = vec![mass / count as f64; count];
        Ok(Self { dim, points, weights, measure: InitialMeasure::Uniform { region: region.clone(), mass } })
    }

    /// Measure `ρ_0 dx` on a bounded region with `ρ_0 <= sup`.
    pub fn with_density<F: Fn(&[f64]) -> f64>(
        region: &Region,
        count: usize,
        sampler: Sampler,
        density: F,
        sup: f64,
    ) -> Result<Self> {
        let dim = region.dim().ok_or_else(|| FlowError::Config("density measure needs a bounded region".into()))?;
        let points = sample_region(region, count, sampler)?;
        let cell = region.volume() / count as f64;
        let mut weights = Vec::with_capacity(count);
        for x in points.chunks(dim) {
            let r = density(x);
            if !(0.0..=sup).contains(&r) {
                return Err(FlowError::Config(format!("density {r} at {x:?} outside [0, {sup}]")));
            }
            weights.push(r * cell);
        }
        Ok(Self { dim, points, weights, measure: InitialMeasure::Density { region: region.clone(), sup } })
    }

    /// Explicit atoms; the initial density is not defined.
    pub fn atoms(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != dim * weights.len() {
            return Err(FlowError::Mismatch("points and weights differ in length".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(FlowError::Config("weights must be nonnegative".into()));
        }
        Ok(Self { dim, points, weights, measure: InitialMeasure::Atoms })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn measure(&self) -> &InitialMeasure {
        &self.measure
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.pairwise_sum()
    }

    /// Sup of the initial density, when it is known.
    pub fn initial_sup_density(&self) -> Option<f64> {
        match &self.measure {
            InitialMeasure::Uniform { region, mass } => Some(mass / region.volume()),
            InitialMeasure::Density { sup, .. } => Some(*sup),
            InitialMeasure::Atoms => None,
        }
    }

    /// Integrates every particle in parallel.
    pub fn integrate(
        &self,
        field: &VectorFieldSpec,
        domain: &ExhaustionDomain,
        params: &IntegratorParams,
        opts: &RunOptions,
    ) -> Result<Vec<Trajectory>> {
        integrate_ensemble(field, domain, &self.points, params, 0.0, opts)
    }

    /// Mass of the particles satisfying the predicate at `t`.
    pub fn alive_mass(&self, trajs: &[Trajectory], t: f64, alive: AlivePredicate) -> f64 {
        let m: Vec<f64> = self
            .weights
            .iter()
            .zip(trajs)
            .map(|(w, tr)| if alive.holds(tr, t) { *w } else { 0.0 })
            .collect();
        m.pairwise_sum()
    }

    fn check(&self, trajs: &[Trajectory]) -> Result<()> {
        if trajs.len() != self.len() {
            return Err(FlowError::Mismatch(format!("{} trajectories for {} particles", trajs.len(), self.len())));
        }
        Ok(())
    }
}

/// Axis-aligned uniform grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub cells: Vec<usize>,
}

impl Grid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, cells: Vec<usize>) -> Result<Self> {
        if lo.len() != hi.len() || lo.len() != cells.len() || lo.is_empty() {
            return Err(FlowError::Config("grid corners and cell counts differ in dimension".into()));
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b)) || cells.contains(&0) {
            return Err(FlowError::Config("grid needs lo < hi and at least one cell per axis".into()));
        }
        Ok(Self { lo, hi, cells })
    }

    pub fn uniform(lo: f64, hi: f64, n: usize, dim: usize) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim], vec![n; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn len(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|k| (self.hi[k] - self.lo[k]) / self.cells[k] as f64).product()
    }

    /// Flat cell index, first axis fastest. Points on the upper faces are
    /// outside.
    pub fn cell_index(&self, x: &[f64]) -> Option<usize> {
        let mut idx = 0;
        let mut stride = 1;
        for k in 0..self.dim() {
            let u = (x[k] - self.lo[k]) / (self.hi[k] - self.lo[k]);
            if !(0.0..1.0).contains(&u) {
                return None;
            }
            let i = ((u * self.cells[k] as f64) as usize).min(self.cells[k] - 1);
            idx += i * stride;
            stride *= self.cells[k];
        }
        Some(idx)
    }

    pub fn center(&self, mut idx: usize) -> Vec<f64> {
        let mut c = Vec::with_capacity(self.dim());
        for k in 0..self.dim() {
            let i = idx % self.cells[k];
            idx /= self.cells[k];
            let h = (self.hi[k] - self.lo[k]) / self.cells[k] as f64;
            c.push(self.lo[k] + (i as f64 + 0.5) * h);
        }
        c
    }
}

/// Histogram of alive mass at one time.
#[derive(Clone, Debug, Serialize)]
pub struct DensityEstimate {
    pub t: f64,
    pub grid: Grid,
    pub masses: Vec<f64>,
    pub alive_mass: f64,
    /// Alive mass that fell outside the grid.
    pub outside_mass: f64,
    pub sup_density: f64,
}

impl DensityEstimate {
    pub fn total_mass(&self) -> f64 {
        self.masses.pairwise_sum()
    }

    pub fn density(&self, i: usize) -> f64 {
        self.masses[i] / self.grid.cell_volume()
    }

    /// CSV with `cell, center_1..center_d, mass, density`, plus constant
    /// metadata columns appended to every row.
    pub fn write_csv<W: Write>(&self, w: W, meta: &[(&str, &str)]) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        write_density_rows(&mut wr, std::slice::from_ref(self), meta)?;
        wr.flush()?;
        Ok(())
    }
}

/// Writes several density estimates as one tidy table with a leading `t`
/// column.
pub fn write_densities_csv<W: Write>(w: W, estimates: &[DensityEstimate], meta: &[(&str, &str)]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    write_density_rows(&mut wr, estimates, meta)?;
    wr.flush()?;
    Ok(())
}

fn write_density_rows<W: Write>(wr: &mut csv::Writer<W>, estimates: &[DensityEstimate], meta: &[(&str, &str)]) -> Result<()> {
    let dim = estimates.first().map_or(0, |e| e.grid.dim());
    let mut header = vec!["t".to_string(), "cell".to_string()];
    header.extend((1..=dim).map(|k| format!("center_{k}")));
    header.extend(["mass".to_string(), "density".to_string()]);
    header.extend(meta.iter().map(|(k, _)| k.to_string()));
    wr.write_record(&header)?;
    for e in estimates {
        for i in 0..e.masses.len() {
            let mut row = vec![format!("{}", e.t), i.to_string()];
            row.extend(e.grid.center(i).iter().map(|c| format!("{c}")));
            row.push(format!("{:e}", e.masses[i]));
            row.push(format!("{:e}", e.density(i)));
            row.extend(meta.iter().map(|(_, v)| v.to_string()));
            wr.write_record(&row)?;
        }
    }
    Ok(())
}

/// Time series CSV `t, value` plus metadata columns.
pub fn write_series_csv<W: Write>(w: W, name: &str, series: &[(f64, f64)], meta: &[(&str, &str)]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string(), name.to_string()];
    header.extend(meta.iter().map(|(k, _)| k.to_string()));
    wr.write_record(&header)?;
    for (t, v) in series {
        let mut row = vec![format!("{t}"), format!("{v:e}")];
        row.extend(meta.iter().map(|(_, v)| v.to_string()));
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

fn positions_at(trajs: &[Trajectory], t: f64, alive: AlivePredicate) -> Result<Vec<Option<Vec<f64>>>> {
    trajs
        .par_iter()
        .map(|tr| {
            if t < tr.start_time || t > tr.horizon * (1.0 + 1e-12) {
                return Err(FlowError::TimeOutOfRange { t, horizon: tr.horizon });
            }
            if !alive.holds(tr, t) {
                return Ok(None);
            }
            Ok(tr.position_at(t.min(tr.final_time())))
        })
        .collect()
}

/// Histogram of `X(t, ·)_# (μ_0 ↾ alive)` on `grid`.
pub fn push_forward(
    ensemble: &ParticleEnsemble,
    trajs: &[Trajectory],
    t: f64,
    grid: &Grid,
    alive: AlivePredicate,
) -> Result<DensityEstimate> {
    ensemble.check(trajs)?;
    let pos = positions_at(trajs, t, alive)?;
    let cells: Vec<Option<usize>> = pos.par_iter().map(|p| p.as_ref().and_then(|x| grid.cell_index(x))).collect();
    // serial accumulation in particle order keeps the sums thread-independent
    let mut masses = vec![0.0; grid.len()];
    let mut alive_w = Vec::with_capacity(pos.len());
    let mut outside_w = Vec::new();
    for (i, (p, c)) in pos.iter().zip(&cells).enumerate() {
        if p.is_none() {
            continue;
        }
        let w = ensemble.weights[i];
        alive_w.push(w);
        match c {
            Some(c) => masses[*c] += w,
            None => outside_w.push(w),
        }
    }
    let vol = grid.cell_volume();
    let sup_density = masses.iter().fold(0.0f64, |m, v| m.max(v / vol));
    Ok(DensityEstimate {
        t,
        grid: grid.clone(),
        masses,
        alive_mass: alive_w.pairwise_sum(),
        outside_mass: outside_w.pairwise_sum(),
        sup_density,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct CompressionRow {
    pub t: f64,
    pub c_measured: f64,
    pub alive_mass: f64,
    pub degenerate: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct CompressionReport {
    pub rows: Vec<CompressionRow>,
    pub c_bound: f64,
    pub stat_tol: f64,
    pub violation: bool,
    pub estimates: Vec<DensityEstimate>,
}

/// `C_measured(t)` = sup of the pushed histogram density over the initial
/// sup density, compared with `e^L`.
pub fn measure_compression(
    ensemble: &ParticleEnsemble,
    trajs: &[Trajectory],
    bound: &DivergenceBound,
    times: &[f64],
    grid: &Grid,
    alive: AlivePredicate,
    stat_tol: f64,
) -> Result<CompressionReport> {
    let rho0 = ensemble
        .initial_sup_density()
        .ok_or_else(|| FlowError::Precondition("compression needs an initial density bound".into()))?;
    let c_bound = bound.compression_bound();
    let mut rows = Vec::with_capacity(times.len());
    let mut estimates = Vec::with_capacity(times.len());
    for &t in times {
        let est = push_forward(ensemble, trajs, t, grid, alive)?;
        let degenerate = est.alive_mass == 0.0;
        let c = if degenerate { 0.0 } else { est.sup_density / rho0 };
        rows.push(CompressionRow { t, c_measured: c, alive_mass: est.alive_mass, degenerate });
        estimates.push(est);
    }
    let violation = rows.iter().any(|r| r.c_measured > c_bound * (1.0 + stat_tol));
    Ok(CompressionReport { rows, c_bound, stat_tol, violation, estimates })
}

/// Radial bump `(1 − |x − c|^2 / r^2)^4` on `B_r(c)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl TestFunction {
    pub fn new(center: Vec<f64>, radius: f64) -> Self {
        Self { center, radius }
    }

    #[inline]
    pub fn value(&self, x: &[f64]) -> f64 {
        let s = distance(x, &self.center).powi(2) / (self.radius * self.radius);
        if s >= 1.0 {
            0.0
        } else {
            (1.0 - s).powi(4)
        }
    }

    #[inline]
    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let r2 = self.radius * self.radius;
        let s = distance(x, &self.center).powi(2) / r2;
        if s >= 1.0 {
            out.fill(0.0);
            return;
        }
        let f = -8.0 * (1.0 - s).powi(3) / r2;
        for k in 0..x.len() {
            out[k] = f * (x[k] - self.center[k]);
        }
    }

    pub fn support(&self) -> Region {
        Region::Ball { center: self.center.clone(), radius: self.radius }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ResidualReport {
    pub residual: f64,
    /// `Σ w ∇φ(X)·b(t, X)`
    pub flux: f64,
    /// Centered difference of `Σ w φ(X)`.
    pub lhs: f64,
    pub contaminated: bool,
    pub warnings: Vec<String>,
}

/// Weak continuity-equation residual at `t`. Trajectories must carry
/// samples at `t` and `t ± dt_fd`.
pub fn continuity_residual(
    ensemble: &ParticleEnsemble,
    trajs: &[Trajectory],
    field: &VectorFieldSpec,
    test: &TestFunction,
    t: f64,
    dt_fd: f64,
    alive: AlivePredicate,
) -> Result<ResidualReport> {
    ensemble.check(trajs)?;
    let d = ensemble.dim();
    let (ta, tb) = (t - dt_fd, t + dt_fd);
    let parts: Vec<(f64, f64, f64, bool)> = trajs
        .par_iter()
        .zip(ensemble.weights.par_iter())
        .map(|(tr, &w)| -> Result<(f64, f64, f64, bool)> {
            if ta < tr.start_time || tb > tr.horizon * (1.0 + 1e-12) {
                return Err(FlowError::TimeOutOfRange { t: tb, horizon: tr.horizon });
            }
            let at = |s: f64| -> Option<Vec<f64>> {
                if alive.holds(tr, s) {
                    tr.position_at(s)
                } else {
                    None
                }
            };
            let xa = at(ta);
            let xb = at(tb);
            let xt = at(t);
            let fa = xa.as_ref().map_or(0.0, |x| test.value(x));
            let fb = xb.as_ref().map_or(0.0, |x| test.value(x));
            let died_in_window = xa.is_some() != xb.is_some();
            let contaminated = died_in_window && test.value(tr.final_position()) > 0.0;
            let mut flux = 0.0;
            if let Some(x) = xt {
                let mut g = vec![0.0; d];
                test.gradient(&x, &mut g);
                if g.iter().any(|v| *v != 0.0) {
                    let b = field.evaluate(t, &x)?;
                    flux = dot(&g, &b);
                }
            }
            Ok((w * fa, w * fb, w * flux, contaminated))
        })
        .collect::<Result<_>>()?;
    let fa: Vec<f64> = parts.iter().map(|p| p.0).collect();
    let fb: Vec<f64> = parts.iter().map(|p| p.1).collect();
    let fl: Vec<f64> = parts.iter().map(|p| p.2).collect();
    let bad = parts.iter().filter(|p| p.3).count();
    let lhs = (fb.pairwise_sum() - fa.pairwise_sum()) / (2.0 * dt_fd);
    let flux = fl.pairwise_sum();
    let mut warnings = Vec::new();
    if bad > 0 {
        warnings.push(format!("{bad} particles died inside the difference window while inside the test support"));
    }
    Ok(ResidualReport { residual: (lhs - flux).abs(), flux, lhs, contaminated: bad > 0, warnings })
}

#[derive(Clone, Debug, Serialize)]
pub struct LogMomentReport {
    pub t_grid: Vec<f64>,
    /// `∫_0^t Σ w |b|/(1+|X|) ds` over alive particles, per grid time.
    pub growth_until: Vec<f64>,
    /// `Σ w log(1 + |X(t)|)` over alive particles.
    pub log_moment: Vec<f64>,
    pub growth_integral: f64,
}

/// Per-particle `∫ |b(s, X)|/(1 + |X|) ds` accumulated at the requested
/// times, integrated on every recorded step by 5-point Gauss–Legendre on
/// the Hermite interpolant.
pub fn growth_along(field: &VectorFieldSpec, traj: &Trajectory, t_grid: &[f64]) -> Result<Vec<f64>> {
    let (gx, gw) = gauss_legendre(5);
    let path = traj.samples();
    let d = traj.dim;
    let mut y = vec![0.0; d];
    let mut v = vec![0.0; d];
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(t_grid.len());
    let mut step = 0usize;
    let mut seg_start = traj.start_time;
    let end = traj.final_time();
    for &tg in t_grid {
        let target = tg.min(end);
        while seg_start < target {
            while step + 1 < traj.len() && traj.times[step + 1] <= seg_start {
                step += 1;
            }
            if step + 1 >= traj.len() {
                break;
            }
            let seg_end = traj.times[step + 1].min(target);
            let half = 0.5 * (seg_end - seg_start);
            let mut parts = [0.0; 5];
            for (q, (s, w)) in gx.iter().zip(&gw).enumerate() {
                let tq = seg_start + half * (s + 1.0);
                path.interpolate_step(step, tq, &mut y);
                field.eval_into(tq, &y, &mut v)?;
                parts[q] = w * half * norm(&v) / (1.0 + norm(&y));
            }
            acc += parts.pairwise_sum();
            seg_start = seg_end;
        }
        out.push(acc);
    }
    Ok(out)
}

pub fn log_moment_functionals(
    ensemble: &ParticleEnsemble,
    trajs: &[Trajectory],
    field: &VectorFieldSpec,
    t_grid: &[f64],
    alive: AlivePredicate,
) -> Result<LogMomentReport> {
    ensemble.check(trajs)?;
    if t_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(FlowError::Config("time grid must be nondecreasing".into()));
    }
    let per: Vec<(Vec<f64>, Vec<f64>)> = trajs
        .par_iter()
        .map(|tr| -> Result<_> {
            let g = growth_along(field, tr, t_grid)?;
            let lm = t_grid
                .iter()
                .map(|&t| {
                    if alive.holds(tr, t) {
                        tr.position_at(t.min(tr.final_time())).map_or(0.0, |x| (1.0 + norm(&x)).ln())
                    } else {
                        0.0
                    }
                })
                .collect();
            Ok((g, lm))
        })
        .collect::<Result<_>>()?;
    let w = &ensemble.weights;
    let column = |pick: &dyn Fn(&(Vec<f64>, Vec<f64>)) -> f64| -> f64 {
        per.iter().zip(w).map(|(p, w)| w * pick(p)).collect::<Vec<_>>().pairwise_sum()
    };
    let mut growth_until = Vec::with_capacity(t_grid.len());
    let mut log_moment = Vec::with_capacity(t_grid.len());
    for j in 0..t_grid.len() {
        growth_until.push(column(&|p| p.0[j]));
        log_moment.push(column(&|p| p.1[j]));
    }
    let growth_integral = growth_until.last().copied().unwrap_or(0.0);
    Ok(LogMomentReport { t_grid: t_grid.to_vec(), growth_until, log_moment, growth_integral })
}

/// `Φ_δ(t) = Σ w log(1 + |X(t) − Y(t)|/δ)` over particles alive in both
/// flows. Both flows must start from the same points.
pub fn divergence_functional_phi_delta(
    flow_a: &[Trajectory],
    flow_b: &[Trajectory],
    weights: &[f64],
    delta: f64,
    t: f64,
) -> Result<f64> {
    if flow_a.len() != flow_b.len() || flow_a.len() != weights.len() {
        return Err(FlowError::Mismatch(format!(
            "{} vs {} trajectories, {} weights",
            flow_a.len(),
            flow_b.len(),
            weights.len()
        )));
    }
    if !(delta > 0.0) {
        return Err(FlowError::Config("delta must be positive".into()));
    }
    let terms: Vec<f64> = flow_a
        .par_iter()
        .zip(flow_b.par_iter())
        .zip(weights.par_iter())
        .map(|((a, b), w)| -> Result<f64> {
            if a.initial != b.initial || a.start_time != b.start_time {
                return Err(FlowError::Mismatch(format!("initial points {:?} and {:?}", a.initial, b.initial)));
            }
            if !(a.alive_at(t) && b.alive_at(t)) {
                return Ok(0.0);
            }
            match (a.position_at(t.min(a.final_time())), b.position_at(t.min(b.final_time()))) {
                (Some(x), Some(y)) => Ok(w * (1.0 + distance(&x, &y) / delta).ln()),
                _ => Ok(0.0),
            }
        })
        .collect::<Result<_>>()?;
    Ok(terms.pairwise_sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::AnalyticShape;

    #[test]
    fn grid_indexing_roundtrip() {
        let g = Grid::uniform(-1.0, 1.0, 4, 2).unwrap();
        assert_eq!(g.len(), 16);
        for i in 0..16 {
            assert_eq!(g.cell_index(&g.center(i)), Some(i));
        }
        assert_eq!(g.cell_index(&[1.0, 0.0]), None);
        assert!((g.cell_volume() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn test_function_gradient_matches_differences() {
        let phi = TestFunction::new(vec![0.5, -0.2], 0.8);
        let x = [0.7, 0.1];
        let mut g = [0.0; 2];
        phi.gradient(&x, &mut g);
        let h = 1e-6;
        for k in 0..2 {
            let mut p = x;
            let mut m = x;
            p[k] += h;
            m[k] -= h;
            assert!((g[k] - (phi.value(&p) - phi.value(&m)) / (2.0 * h)).abs() < 1e-8);
        }
        assert_eq!(phi.value(&[2.0, 2.0]), 0.0);
    }

    #[test]
    fn identity_flow_keeps_uniform_density() {
        let region = Region::centered_ball(2, 1.0);
        let ens = ParticleEnsemble::uniform(&region, 20_000, 1.0, Sampler::Lattice).unwrap();
        assert!((ens.total_mass() - 1.0).abs() < 1e-12);
        let f = VectorFieldSpec::analytic(AnalyticShape::Zero, 2, 1.0).unwrap();
        let dom = ExhaustionDomain::whole_space(2, 3);
        let trajs = ens
            .integrate(&f, &dom, &IntegratorParams::adaptive(1.0, 1e-8), &RunOptions::stops(vec![0.5]))
            .unwrap();
        let g = Grid::uniform(-0.5, 0.5, 4, 2).unwrap();
        let est = push_forward(&ens, &trajs, 0.5, &g, AlivePredicate::MaximalTime).unwrap();
        let rho = 1.0 / std::f64::consts::PI;
        for i in 0..g.len() {
            assert!((est.density(i) / rho - 1.0).abs() < 0.05);
        }
        assert!(est.total_mass() <= est.alive_mass);
        assert!(push_forward(&ens, &trajs, 1.5, &g, AlivePredicate::MaximalTime).is_err());
    }

    #[test]
    fn phi_delta_of_translated_flows() {
        let dom = ExhaustionDomain::whole_space(2, 3);
        let p = IntegratorParams::adaptive(1.0, 1e-10);
        let ens = ParticleEnsemble::uniform(&Region::centered_ball(2, 1.0), 50, 2.0, Sampler::Lattice).unwrap();
        let zero = VectorFieldSpec::analytic(AnalyticShape::Zero, 2, 1.0).unwrap();
        let drift = VectorFieldSpec::analytic(AnalyticShape::Constant { value: vec![0.3, 0.4] }, 2, 1.0).unwrap();
        let a = ens.integrate(&zero, &dom, &p, &RunOptions::default()).unwrap();
        let b = ens.integrate(&drift, &dom, &p, &RunOptions::default()).unwrap();
        let v = divergence_functional_phi_delta(&a, &b, ens.weights(), 1e-2, 0.8).unwrap();
        assert!((v - 2.0 * (1.0 + 0.5 * 0.8 / 1e-2f64).ln()).abs() < 1e-8);
        assert_eq!(divergence_functional_phi_delta(&a, &a, ens.weights(), 1e-2, 0.8).unwrap(), 0.0);
        assert!(divergence_functional_phi_delta(&a, &b[1..], &ens.weights()[1..], 1e-2, 0.8).is_err());
    }
}
