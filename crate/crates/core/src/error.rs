//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input located by byte offset into the decoded stream.
    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },

    /// Malformed input located by 1-based line number.
    #[error("parse error at line {line}: {msg}")]
    ParseLine { line: usize, msg: String },

    /// A precondition on arguments was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Unknown document, term, or query.
    #[error("lookup error: {0}")]
    Lookup(String),

    /// Vectors or configurations that must agree do not.
    #[error("mismatch: {0}")]
    Mismatch(String),

    /// Non-finite values or optimization divergence.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A corrupt, missing, or incompatible artifact file.
    #[error("artifact error ({path}): {msg}")]
    Artifact { path: PathBuf, msg: String },

    /// Bad experiment configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn artifact(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Artifact {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
