use thiserror::Error;

/// Errors produced by the numeric routines and the checkpoint codec.
#[derive(Debug, Error)]
pub enum LocoError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is singular (pivot {pivot:e} below threshold {threshold:e})")]
    Singular { pivot: f64, threshold: f64 },

    #[error("input is not skew-symmetric (residual {residual:e})")]
    NotSkew { residual: f64 },

    #[error("invalid rank r={r} for dimension d={d}")]
    InvalidRank { d: usize, r: usize },

    #[error("dimension {d} exceeds limit {limit} for this operation")]
    DimensionTooLarge { d: usize, limit: usize },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("block size {b} does not divide dimension {d}")]
    BlockMismatch { d: usize, b: usize },

    #[error("reflector {index} is zero")]
    ZeroReflector { index: usize },

    #[error("unsupported benchmark configuration: {0}")]
    ConfigUnsupported(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LocoError>;

pub(crate) fn mismatch(msg: impl Into<String>) -> LocoError {
    LocoError::DimensionMismatch(msg.into())
}
