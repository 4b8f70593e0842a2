use thiserror::Error;

/// Errors produced by the detection library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("pointwise density is unavailable for {0}")]
    DensityUnavailable(String),

    #[error("quadrature did not converge on [{a}, {b}] (error estimate {estimate:e})")]
    Quadrature { a: f64, b: f64, estimate: f64 },

    #[error("non-finite objective at lambda={lambda}, u={u:?}")]
    NonFinite { lambda: f64, u: Vec<f64> },

    #[error("non-finite log-likelihood ratio {0}")]
    NonFiniteLlr(f64),

    #[error("problem size {size} exceeds the exact-solver guard of {guard} atoms")]
    SizeGuard { size: usize, guard: usize },

    #[error("calibration bracket exhausted: {0}")]
    Bracket(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
