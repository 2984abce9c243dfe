//! Error type shared by all pipeline stages.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("operation requires a non-empty point cloud")]
    EmptyCloud,

    #[error("index {index} out of range for {len} elements")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("length mismatch: expected {expected}, got {got} ({what})")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("unknown shape kind: {0}")]
    UnknownShape(String),

    #[error("contamination failed: {0}")]
    Contamination(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True when the error originates from input data (files, formats,
    /// malformed clouds) rather than from computation. The CLI maps data
    /// errors and runtime errors to distinct exit codes.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io(_)
                | Error::Parse { .. }
                | Error::Checkpoint(_)
                | Error::UnknownShape(_)
                | Error::LengthMismatch { .. }
        )
    }
}
