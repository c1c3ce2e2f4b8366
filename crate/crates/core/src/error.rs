//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the modulation, decomposition and evaluation layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid tensor shape: {0}")]
    InvalidShape(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("mode {mode} out of range for order-{order} tensor")]
    ModeOutOfRange { mode: usize, order: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("component count {k} exceeds the hard cap {cap}")]
    TooManyComponents { k: usize, cap: usize },

    #[error("non-finite data in {0}")]
    NonFinite(&'static str),

    #[error("rank bound exceeded: ka={ka} outside identifiable range 1..={max}")]
    RankBoundExceeded { ka: u64, max: u64 },

    #[error("bit budget {bits} cannot give each of {dims} dimensions at least one bit")]
    BitBudgetTooSmall { bits: usize, dims: usize },

    #[error("{bits} bits exceed the capacity {cap} of a dimension-{dim} sub-constellation")]
    BitsExceedCapacity { bits: usize, cap: usize, dim: usize },

    #[error("bit length mismatch: expected {expected}, got {got}")]
    BitLengthMismatch { expected: usize, got: usize },

    #[error("zero vector passed to {0}")]
    ZeroVector(&'static str),

    #[error("codebook too large for exhaustive search: {bits} bits > {max}")]
    CodebookTooLarge { bits: usize, max: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("search space too large: {0}")]
    SearchSpaceTooLarge(String),

    #[error("codebook parse error at line {line}: {reason}")]
    CodebookParse { line: usize, reason: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
