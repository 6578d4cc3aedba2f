use thiserror::Error;

/// Crate-wide error type.
///
/// `InvalidArgument` covers contract violations detectable from the inputs
/// alone (bad dimensions, out-of-range parameters). `Format` carries the byte
/// offset at which a serialized artifact stopped making sense, so corrupt
/// files can be diagnosed without a hex dump.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub fn format(offset: u64, detail: impl Into<String>) -> Self {
        Error::Format {
            offset,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
