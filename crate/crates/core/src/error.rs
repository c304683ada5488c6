use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value lies outside the domain of an operation. `field` names the
    /// offending input.
    #[error("{field}: {message}")]
    Domain { field: String, message: String },

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape { context: &'static str, expected: usize, got: usize },

    #[error("{context} is empty")]
    Empty { context: &'static str },

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("line {line}: invalid record: {message}")]
    Validation { line: u64, message: String },

    #[error("non-finite state at integration step {step}{}", sample.map(|s| format!(" (sample {s})")).unwrap_or_default())]
    Integration { step: usize, sample: Option<usize> },

    #[error("{what} not found at {}", path.display())]
    MissingArtifact { what: String, path: PathBuf },

    #[error("unsupported checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Domain { field: field.into(), message: message.into() }
    }
}
