use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// Zero is (numerically) a Dirichlet eigenvalue of the discrete operator.
    #[error("singular Schrödinger operator: {0}")]
    EigenvalueHit(String),

    #[error("degenerate certificate system, smallest singular value {sigma_min:e}")]
    DegenerateCertificate { sigma_min: f64 },

    #[error("property violation: {0}")]
    PropertyViolation(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
