//! Error type shared by all modules.

use thiserror::Error;

/// Errors produced by dictionary construction, coherence computation,
/// sampling and solving.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Operator dimensions overflow `usize` (Kronecker products).
    #[error("operator dimensions overflow")]
    DimensionOverflow,

    /// Index sets passed to a dictionary builder are malformed.
    #[error("invalid index sets: {0}")]
    InvalidIndexSets(String),

    /// A drawing distribution is not a valid probability vector.
    #[error("invalid drawing distribution: {0}")]
    InvalidDistribution(String),

    /// A support set is malformed (duplicates, out of range, empty where
    /// nonempty is required).
    #[error("invalid support: {0}")]
    InvalidSupport(String),

    /// The operation is only defined for deterministic-finite dictionaries
    /// (or, symmetrically, only for Gaussian generators).
    #[error("operation not available for this dictionary kind: {0}")]
    WrongDictionaryKind(String),

    /// Power iteration hit its iteration cap before the requested tolerance.
    #[error("power iteration did not converge after {iterations} iterations (last estimate {estimate:.6e})")]
    PowerIterationDiverged { iterations: usize, estimate: f64 },

    /// Generic argument validation failure; the message names the argument.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;
