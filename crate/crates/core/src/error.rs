use alloc::vec::Vec;

use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

/// Errors raised by the numeric core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("backward needs a cache recorded in train or frozen-statistics mode")]
    EvalCache,

    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),

    #[error("dimension {dim} exceeds the exhaustive-search limit of {max}")]
    DimensionTooLarge { dim: usize, max: usize },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("state became non-finite at step {step}")]
    Diverged { step: usize },

    #[error("matrix is not symmetric (|a_ij - a_ji| = {gap:e})")]
    NotSymmetric { gap: f64 },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("value {0} is not a binary corner coordinate (expected -1 or +1)")]
    NotACorner(f64),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("{splits} splits requested but the smallest class has {min_class} examples")]
    TooManySplits { splits: usize, min_class: usize },

    #[error(transparent)]
    Idx(#[from] IdxError),
}

/// Failures decoding the IDX container. Each variant is a distinct error code.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdxError {
    #[error("bad magic number {0:#010x}")]
    BadMagic(u32),

    #[error("truncated: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("payload of {actual} bytes does not match the {expected} declared by the header")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("image and label counts differ ({images} vs {labels})")]
    CountMismatch { images: usize, labels: usize },

    #[error("label {label} at index {index} is outside 0..10")]
    LabelOutOfRange { index: usize, label: u8 },

    #[error("images are {rows}x{cols}, expected 28x28")]
    ImageSize { rows: usize, cols: usize },
}

impl IdxError {
    /// Stable numeric code, usable as a process exit detail or in logs.
    pub fn code(&self) -> u8 {
        match self {
            IdxError::BadMagic(_) => 1,
            IdxError::Truncated { .. } => 2,
            IdxError::DimensionMismatch { .. } => 3,
            IdxError::CountMismatch { .. } => 4,
            IdxError::LabelOutOfRange { .. } => 5,
            IdxError::ImageSize { .. } => 6,
        }
    }
}
