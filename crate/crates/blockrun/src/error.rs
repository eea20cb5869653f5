use thiserror::Error;

/// Errors produced by the runtime, the policy and the harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {details}")]
    ShapeMismatch { op: &'static str, details: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("unsupported operator in sparse path: {0}")]
    UnsupportedSparse(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("misaligned streams: {0}")]
    Misaligned(String),

    #[error("malformed file {path}: {details}")]
    Format { path: String, details: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(op: &'static str, details: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            details: details.into(),
        }
    }
}
