//! Experiment configuration files.

use std::path::{Path, PathBuf};

use regflow::counterexample::CounterexampleParams;
use regflow::domain::{ExhaustionDomain, Region};
use regflow::field::{mollify, AnalyticShape, DivergenceBound, MollifierParams, VectorFieldSpec};
use regflow::integrator::IntegratorParams;
use regflow::sampling::Sampler;
use regflow::transport::Grid;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config {path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// The statement this experiment exercises, quoted.
    #[serde(default)]
    pub anchor: String,
    /// Expected runtime class: `fast`, `medium` or `slow`.
    #[serde(default = "default_runtime")]
    pub runtime: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub trajectories: Option<TrajectoryOutput>,
    pub field: FieldConfig,
    pub domain: DomainConfig,
    pub integrator: IntegratorParams,
    #[serde(default)]
    pub ensemble: Option<EnsembleConfig>,
    pub experiment: ExperimentKind,
}

fn default_runtime() -> String {
    "fast".into()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryOutput {
    /// How many particles to dump, from the start of the ensemble.
    pub count: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "source", deny_unknown_fields)]
pub enum FieldConfig {
    Analytic {
        shape: AnalyticShape,
        dim: usize,
        horizon: f64,
        #[serde(default)]
        support: Option<Region>,
        #[serde(default)]
        mollify: Option<MollifyConfig>,
    },
    Counterexample {
        params: CounterexampleParams,
        horizon: f64,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MollifyConfig {
    pub epsilon: f64,
    #[serde(default = "default_quadrature")]
    pub quadrature_points: usize,
    #[serde(default = "default_clip")]
    pub clip: Region,
}

fn default_quadrature() -> usize {
    10
}

fn default_clip() -> Region {
    Region::Whole
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub omega: Region,
    #[serde(default = "default_levels")]
    pub levels: usize,
}

fn default_levels() -> usize {
    6
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub region: Region,
    pub count: usize,
    #[serde(default = "default_mass")]
    pub mass: f64,
    #[serde(default)]
    pub sampler: Sampler,
}

fn default_mass() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lo: f64,
    pub hi: f64,
    pub cells: usize,
}

impl GridConfig {
    pub fn build(&self, dim: usize) -> regflow::Result<Grid> {
        Grid::uniform(self.lo, self.hi, self.cells, dim)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResidualConfig {
    pub center: Vec<f64>,
    pub radius: f64,
    pub t: f64,
    pub dt_fd: f64,
    #[serde(default = "default_residual_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_band")]
    pub halving_band: [f64; 2],
}

fn default_residual_tol() -> f64 {
    1e-4
}

fn default_band() -> [f64; 2] {
    [0.4, 0.6]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OscillationConfig {
    #[serde(default = "default_osc_samples")]
    pub samples: usize,
    #[serde(default = "default_high")]
    pub high: f64,
    #[serde(default = "default_low")]
    pub low: f64,
    #[serde(default = "default_total_bound")]
    pub total_bound: f64,
    #[serde(default = "default_min_fraction")]
    pub min_fraction: f64,
    #[serde(default = "default_min_excursions")]
    pub min_excursions: usize,
}

fn default_osc_samples() -> usize {
    100
}
fn default_high() -> f64 {
    8.0
}
fn default_low() -> f64 {
    1.0
}
fn default_total_bound() -> f64 {
    2.05
}
fn default_min_fraction() -> f64 {
    0.99
}
fn default_min_excursions() -> usize {
    3
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SobolevConfig {
    #[serde(default = "default_sobolev_radius")]
    pub radius: f64,
    #[serde(default = "default_k_limit")]
    pub k_limit: usize,
    #[serde(default = "default_tail_tol")]
    pub tail_tol: f64,
    #[serde(default = "default_sobolev_points")]
    pub points: usize,
    #[serde(default = "default_radial_panels")]
    pub radial_panels: usize,
}

fn default_sobolev_radius() -> f64 {
    2.0
}
fn default_k_limit() -> usize {
    6
}
fn default_tail_tol() -> f64 {
    1e-6
}
fn default_sobolev_points() -> usize {
    48
}
fn default_radial_panels() -> usize {
    64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileMode {
    Analytic,
    Sampled,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum ExperimentKind {
    Flow {
        times: Vec<f64>,
        grid: GridConfig,
        /// Expected `log J` at the horizon for every particle.
        #[serde(default)]
        jacobian_log_target: Option<f64>,
        #[serde(default = "default_jacobian_tol")]
        jacobian_tol: f64,
        #[serde(default)]
        residual: Option<ResidualConfig>,
    },
    Compression {
        times: Vec<f64>,
        grid: GridConfig,
        bound: DivergenceBound,
        /// Expected `C` at the last time; defaults to `e^L`.
        #[serde(default)]
        target: Option<f64>,
        #[serde(default = "default_compression_band")]
        band: f64,
        #[serde(default = "default_compression_slack")]
        slack: f64,
    },
    Semigroup {
        s: f64,
        t: f64,
        /// Explicit starting points; otherwise the ensemble is used.
        #[serde(default)]
        points: Option<Vec<Vec<f64>>>,
        #[serde(default = "default_position_tol")]
        position_tol: f64,
        #[serde(default)]
        time_tol: Option<f64>,
    },
    Stability {
        epsilons: Vec<f64>,
        #[serde(default = "default_quadrature")]
        mollifier_points: usize,
        #[serde(default = "default_clip")]
        clip: Region,
        level: usize,
        t: f64,
        #[serde(default = "default_slack")]
        slack: f64,
        #[serde(default = "default_final_bound")]
        final_bound: f64,
        #[serde(default = "default_time_tol")]
        time_tol: f64,
        #[serde(default = "default_min_fraction")]
        lsc_fraction: f64,
    },
    BlowupCensus {
        #[serde(default)]
        bound: Option<DivergenceBound>,
        #[serde(default = "default_window")]
        window: usize,
        high: f64,
        low: f64,
        #[serde(default = "default_endpoint_tol")]
        endpoint_tol: f64,
    },
    Counterexample {
        #[serde(default)]
        oscillation: Option<OscillationConfig>,
        #[serde(default)]
        sobolev: Option<SobolevConfig>,
        #[serde(default)]
        geometry: bool,
    },
    CrossingTime {
        radius: f64,
        #[serde(default = "default_profile")]
        profile: ProfileMode,
        #[serde(default = "default_angles")]
        angles: usize,
        #[serde(default = "default_crossing_tol")]
        tol: f64,
        #[serde(default)]
        tv_control: bool,
    },
    NoBlowup {
        #[serde(default = "default_tol_frac")]
        tol_frac: f64,
        /// Single particle whose growth integral is reported separately.
        #[serde(default)]
        probe: Option<Vec<f64>>,
        #[serde(default)]
        probe_target: Option<f64>,
        #[serde(default = "default_probe_tol")]
        probe_tol: f64,
        /// Whether a violated growth criterion is the expected outcome.
        #[serde(default)]
        expect_violation: bool,
    },
}

fn default_jacobian_tol() -> f64 {
    1e-5
}
fn default_compression_band() -> f64 {
    0.05
}
fn default_compression_slack() -> f64 {
    0.1
}
fn default_position_tol() -> f64 {
    1e-6
}
fn default_slack() -> f64 {
    0.1
}
fn default_final_bound() -> f64 {
    1e-2
}
fn default_time_tol() -> f64 {
    0.05
}
fn default_window() -> usize {
    16
}
fn default_endpoint_tol() -> f64 {
    1e-6
}
fn default_profile() -> ProfileMode {
    ProfileMode::Sampled
}
fn default_angles() -> usize {
    720
}
fn default_crossing_tol() -> f64 {
    0.02
}
fn default_tol_frac() -> f64 {
    1e-3
}
fn default_probe_tol() -> f64 {
    1e-4
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Flow { .. } => "flow",
            ExperimentKind::Compression { .. } => "compression",
            ExperimentKind::Semigroup { .. } => "semigroup",
            ExperimentKind::Stability { .. } => "stability",
            ExperimentKind::BlowupCensus { .. } => "blowup-census",
            ExperimentKind::Counterexample { .. } => "counterexample",
            ExperimentKind::CrossingTime { .. } => "crossing-time",
            ExperimentKind::NoBlowup { .. } => "no-blowup",
        }
    }
}

/// A parsed config together with the digest of its source text.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub path: PathBuf,
    pub config: ExperimentConfig,
    pub digest: String,
}

pub fn digest(text: &[u8]) -> String {
    hex::encode(Sha256::digest(text))
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        Self::parse(path, &text)
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self, ConfigError> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: path.into(), message: e.to_string() })?;
        let loaded = Self { path: path.into(), config, digest: digest(text.as_bytes()) };
        loaded.validate()?;
        Ok(loaded)
    }

    /// Applies a command-line seed; the digest then covers the override.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.config.seed = Some(s);
            self.digest = digest(format!("{}\nseed={s}", self.digest).as_bytes());
        }
        self
    }

    fn invalid(&self, message: impl Into<String>) -> ConfigError {
        ConfigError::Invalid { path: self.path.clone(), message: message.into() }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let c = &self.config;
        c.integrator.validate().map_err(|e| self.invalid(format!("integrator: {e}")))?;
        let dim = c.field.dim();
        if let Some(d) = c.domain.omega.dim() {
            if d != dim {
                return Err(self.invalid(format!("domain.omega has dimension {d}, field has {dim}")));
            }
        }
        if c.integrator.horizon > c.field.horizon() {
            return Err(self.invalid("integrator.horizon exceeds field.horizon"));
        }
        let needs_ensemble = !matches!(
            c.experiment,
            ExperimentKind::Counterexample { .. } | ExperimentKind::Semigroup { points: Some(_), .. }
        );
        if needs_ensemble && c.ensemble.is_none() {
            return Err(self.invalid(format!("experiment kind {} needs an [ensemble] table", c.experiment.name())));
        }
        let is_counterexample = matches!(c.field, FieldConfig::Counterexample { .. });
        if matches!(c.experiment, ExperimentKind::Counterexample { .. }) != is_counterexample {
            return Err(self.invalid("the counterexample experiment and field source go together"));
        }
        if let ExperimentKind::CrossingTime { profile: ProfileMode::Analytic, .. } = c.experiment {
            if !matches!(c.field, FieldConfig::Analytic { mollify: None, .. }) {
                return Err(self.invalid("analytic crossing profiles need an unmollified analytic field"));
            }
        }
        Ok(())
    }

    /// The ensemble sampler with the effective seed applied.
    pub fn sampler(&self) -> Option<Sampler> {
        let e = self.config.ensemble.as_ref()?;
        Some(match (e.sampler, self.config.seed) {
            (Sampler::Random { .. }, Some(seed)) => Sampler::Random { seed },
            (s, _) => s,
        })
    }
}

impl FieldConfig {
    pub fn dim(&self) -> usize {
        match self {
            FieldConfig::Analytic { dim, .. } => *dim,
            FieldConfig::Counterexample { params, .. } => params.d,
        }
    }

    pub fn horizon(&self) -> f64 {
        match self {
            FieldConfig::Analytic { horizon, .. } | FieldConfig::Counterexample { horizon, .. } => *horizon,
        }
    }

    pub fn build(&self) -> regflow::Result<VectorFieldSpec> {
        match self {
            FieldConfig::Analytic { shape, dim, horizon, support, mollify: m } => {
                let mut f = VectorFieldSpec::analytic(shape.clone(), *dim, *horizon)?;
                if let Some(s) = support {
                    f = f.with_support(s.clone());
                }
                if let Some(m) = m {
                    let params = MollifierParams { epsilon: m.epsilon, quadrature_points: m.quadrature_points };
                    f = mollify(&f, &params, &m.clip)?;
                }
                Ok(f)
            }
            FieldConfig::Counterexample { params, horizon } => regflow::counterexample::build_field(params, *horizon),
        }
    }
}

impl DomainConfig {
    pub fn build(&self, dim: usize) -> regflow::Result<ExhaustionDomain> {
        ExhaustionDomain::with_default_exhaustion(dim, self.omega.clone(), self.levels)
    }
}
