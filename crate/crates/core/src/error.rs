use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// Input data or parameters failed validation.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// A mechanism would spend more privacy budget than was granted.
    #[error("privacy budget violation: {0}")]
    Budget(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// Whether the error stems from malformed input rather than the environment.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Invalid(_) | Error::Csv(_) | Error::Json(_))
    }
}
