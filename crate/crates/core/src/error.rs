use thiserror::Error;

/// Errors raised across the analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("no records")]
    NoRecords,

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("layer {index}: {message}")]
    Layer { index: usize, message: String },

    #[error("date misalignment: {0}")]
    Misaligned(String),

    #[error("non-real reconstruction: max imaginary part {0:e}")]
    NonReal(f64),

    #[error("non-finite loss at round {0}")]
    NonFiniteLoss(usize),

    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for failures of the numerics rather than of the input data.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonReal(_) | Error::NonFiniteLoss(_) | Error::Numeric(_)
        )
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
