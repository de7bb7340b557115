use thiserror::Error;

/// Errors produced anywhere in the suggestion pipeline.
#[derive(Debug, Error)]
pub enum AcgError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: String,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("records are not sorted by timestamp (at index {0})")]
    Unsorted(usize),
    #[error("index out of range: {0}")]
    OutOfRange(String),
    #[error("missing resource: {0}")]
    MissingResource(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("format error at {location}: {message}")]
    Format { location: String, message: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("missing gradients: {0}")]
    MissingGradients(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl AcgError {
    pub(crate) fn format(location: impl Into<String>, message: impl Into<String>) -> Self {
        AcgError::Format {
            location: location.into(),
            message: message.into(),
        }
    }

    pub(crate) fn dim(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        AcgError::Dimension {
            context: context.into(),
            expected,
            actual,
        }
    }
}

pub type Result<T, E = AcgError> = std::result::Result<T, E>;
