use thiserror::Error;

/// Errors raised by the flow, transport and diagnostics layers.
#[derive(Debug, Error)]
pub enum FlowError {
    #[error("non-finite field value at t = {t}, x = {x:?}")]
    NonFinite { t: f64, x: Vec<f64> },

    #[error("time {t} outside [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("point {x:?} does not lie in the domain")]
    OutsideDomain { x: Vec<f64> },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("empty trajectory")]
    EmptyTrajectory,

    #[error("window of {window} samples exceeds trajectory length {samples}")]
    Window { window: usize, samples: usize },

    #[error("mismatched particle sets: {0}")]
    Mismatch(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("region syntax error: {0}")]
    RegionSyntax(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, FlowError>;
