use std::io;

use thiserror::Error;

/// Errors produced by the hashing, attention, serving and data layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("behavior sequence is empty")]
    EmptySequence,

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("hash family does not match bucket table: {0}")]
    FamilyMismatch(String),

    #[error("malformed input at byte {offset}: {reason}")]
    Malformed { offset: usize, reason: String },

    #[error("unsupported wire version {found}")]
    VersionMismatch { found: u16 },

    #[error("unknown user {0}")]
    UnknownUser(u64),

    #[error("remote error {code}: {message}")]
    Remote { code: u16, message: String },

    #[error("{malformed} of {total} rows malformed (first at line {first_line}: {first_reason})")]
    TooManyMalformed {
        malformed: usize,
        total: usize,
        first_line: usize,
        first_reason: String,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn malformed(offset: usize, reason: impl Into<String>) -> Self {
        Error::Malformed {
            offset,
            reason: reason.into(),
        }
    }
}
