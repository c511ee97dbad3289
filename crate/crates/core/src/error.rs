use std::fmt;

use crate::tensor::Shape;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch, expected {expected}, got {actual}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        actual: String,
    },
    #[error("{op}: spatial size {height}x{width} is not a power of two (radix-2 transforms only)")]
    NotPowerOfTwo {
        op: &'static str,
        height: usize,
        width: usize,
    },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("backward already ran on this tape; reset it before recording a new pass")]
    BackwardAlreadyRan,
    #[error("backward needs a single-element loss, got shape {0}")]
    NonScalarLoss(Shape),
    #[error("{0}")]
    Data(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl fmt::Display, actual: impl fmt::Display) -> Self {
        Error::ShapeMismatch {
            op,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
