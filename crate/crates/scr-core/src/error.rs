//! Error types shared across the crate.

use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A field of an input struct violated its documented invariant.
    #[error("invalid {field}: {reason}")]
    Validation { field: &'static str, reason: String },

    /// A serialized artifact is malformed. `offset` is the byte position
    /// at which the problem was detected.
    #[error("format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    /// Incompatible shapes or parameters (M not dividing D, mismatched
    /// codebook/code dimensions, and the like).
    #[error("configuration error: {0}")]
    Config(String),

    /// The data violates an evaluation-protocol requirement.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// A caller broke an API contract (wrong distance kind, misaligned
    /// batch and codes, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// In-memory data is inconsistent with the structure it came from,
    /// e.g. a centroid index out of range.
    #[error("corrupt data: {0}")]
    Corruption(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub fn validation(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Validation {
            field,
            reason: reason.into(),
        }
    }

    pub fn format(offset: u64, reason: impl Into<String>) -> Self {
        Error::Format {
            offset,
            reason: reason.into(),
        }
    }
}
