use std::io;

use thiserror::Error;

/// Errors raised by the simulation, reconstruction and tracking pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid probe: {0}")]
    InvalidProbe(String),

    #[error("invalid sequence: {0}")]
    InvalidSequence(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid phantom: {0}")]
    InvalidPhantom(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("data does not match probe: {0}")]
    ProbeMismatch(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("enhancer failed: {0}")]
    Enhancer(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("malformed file, field `{field}`: {reason}")]
    Format { field: &'static str, reason: String },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn format(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            field,
            reason: reason.into(),
        }
    }
}
