use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("region mismatch: {0}")]
    RegionMismatch(String),

    #[error("potential rejected at x = {x}: {reason}")]
    PotentialViolation { x: f64, reason: String },

    #[error("state is not admissible: {0}")]
    Inadmissible(String),

    #[error("factorization failed at pivot {pivot} (value {value:e})")]
    Factorization { pivot: usize, value: f64 },

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("trace too short: {len} samples, need at least {min}")]
    TraceTooShort { len: usize, min: usize },

    #[error("diagnostics failure: {0}")]
    Diagnostics(String),

    #[error("size cap exceeded: {0}")]
    SizeCap(String),

    #[error("inconsistent table: {0}")]
    Table(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("resource cap exceeded: {0}")]
    Budget(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
