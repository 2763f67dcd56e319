use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dataset too small: {0}")]
    TooSmall(String),

    #[error("non-finite component at vector {index}, dimension {dim}")]
    NonFinite { index: usize, dim: usize },

    #[error("malformed file at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("inconsistent dimension at byte offset {offset}: expected {expected}, found {found}")]
    InconsistentDimension {
        offset: u64,
        expected: usize,
        found: usize,
    },

    #[error("wrong file type: expected {expected}, found {found}")]
    WrongKind { expected: String, found: String },

    #[error("integrity check failed: {0}")]
    Integrity(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }
}
