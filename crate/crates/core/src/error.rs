use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad grouping of errors, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Io,
    Format,
    Protocol,
    UndefinedMetric,
    Invalid,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { found: u16, expected: u16 },

    #[error("truncated input: {context} needs {needed} bytes, {available} available")]
    Truncated {
        context: &'static str,
        needed: u64,
        available: u64,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("calibration has not been fitted")]
    Unfitted,

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("unknown category {0:?}")]
    UnknownCategory(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io(_) => ErrorClass::Io,
            Error::BadMagic { .. }
            | Error::UnsupportedVersion { .. }
            | Error::Truncated { .. }
            | Error::NonFinite(_)
            | Error::Malformed(_)
            | Error::DimensionMismatch { .. }
            | Error::Json(_) => ErrorClass::Format,
            Error::Protocol(_) | Error::UnknownCategory(_) => ErrorClass::Protocol,
            Error::UndefinedMetric(_) => ErrorClass::UndefinedMetric,
            Error::Invariant(_) | Error::Config(_) | Error::Empty(_) | Error::Unfitted => {
                ErrorClass::Invalid
            }
        }
    }

    pub(crate) fn dims(context: impl Into<String>, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            context: context.into(),
            expected,
            found,
        }
    }
}
