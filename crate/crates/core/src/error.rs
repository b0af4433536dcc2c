use thiserror::Error;

/// Errors raised by calibration, policies, samplers and the experiment harness.
#[derive(Debug, Error)]
pub enum CpcError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid loss curve: {0}")]
    InvalidLoss(String),

    #[error("loss curves disagree: expected {expected} grid points, curve {index} has {found}")]
    MismatchedGrid {
        expected: usize,
        index: usize,
        found: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed claim record at index {index}: {reason}")]
    MalformedClaim { index: usize, reason: String },

    #[error("density is zero where a ratio is required: {0}")]
    ZeroDensity(String),

    #[error("support is not enumerable")]
    NotEnumerable,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, CpcError>;

pub(crate) fn invalid(msg: impl Into<String>) -> CpcError {
    CpcError::InvalidArgument(msg.into())
}
