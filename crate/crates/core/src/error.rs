use thiserror::Error;

/// Errors raised across the fitting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("subject {id}: {msg}")]
    Validation { id: String, msg: String },

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("schema: {0}")]
    Schema(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("empty risk set at transformed time {time} (beyond the effective truncation time)")]
    EmptyRiskSet { time: f64 },

    #[error("zero risk-set denominator at transformed event time {time}")]
    ZeroDenominator { time: f64 },

    #[error("link value {value} is not strictly positive")]
    NonPositiveLink { value: f64 },

    #[error("score is not finite at beta = {beta:?}")]
    NonFiniteScore { beta: Vec<f64> },

    #[error("variance estimation failed: {0}")]
    Variance(String),

    #[error("{dropped} of {total} bootstrap replicates failed")]
    Bootstrap { dropped: usize, total: usize },

    #[error("unsupported input: {0}")]
    Unsupported(String),

    #[error("prediction time {requested} exceeds baseline support; maximal valid time is {max_time}")]
    Truncation { requested: f64, max_time: f64 },

    #[error("simulation configuration rejected: {0}")]
    ConfigRejected(String),

    #[error("censoring calibration failed: {0}")]
    Calibration(String),

    #[error("{failed} of {total} replicates did not converge")]
    Harness { failed: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
