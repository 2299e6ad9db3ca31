use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },

    #[error("{0}")]
    Graph(String),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("incompatible policy: {0}")]
    Incompatible(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { key: key.into(), message: message.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

/// Failures while reading a checkpoint file. Each malformation has its own
/// variant so callers can tell a stale format from a damaged file.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("unsupported checkpoint header {found:?} (expected {expected:?})")]
    VersionMismatch { found: String, expected: &'static str },

    #[error("checkpoint truncated: {0}")]
    Truncated(String),

    #[error("parameter `{name}` has shape {found:?}, network expects {expected:?}")]
    ShapeMismatch { name: String, found: Vec<usize>, expected: Vec<usize> },

    #[error("malformed checkpoint line {line}: {message}")]
    Malformed { line: usize, message: String },
}
