//! Error type with the exit-code contract: 0 success, 1 runtime failure,
//! 2 configuration error.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed or invalid configuration; exits with code 2.
    #[error("{0}")]
    Config(String),
    /// Failure while executing a valid configuration; exits with code 1.
    #[error("{0}")]
    Runtime(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }

    /// Wraps a JSON parse failure with the source path, the line:column
    /// position, and the key path that failed to deserialize.
    pub fn from_json(path: &Path, err: serde_path_to_error::Error<serde_json::Error>) -> Self {
        let inner = err.inner();
        let key = err.path().to_string();
        let location = format!("{}:{}:{}", path.display(), inner.line(), inner.column());
        if key == "." {
            CliError::Config(format!("{location}: {inner}"))
        } else {
            CliError::Config(format!("{location}: key {key}: {inner}"))
        }
    }
}

impl From<ratio_core::Error> for CliError {
    fn from(err: ratio_core::Error) -> Self {
        CliError::Runtime(err.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Runtime(err.to_string())
    }
}
