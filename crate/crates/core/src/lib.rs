//! Block-structured compressed sensing at desk scale.
//!
//! The crate models acquisition by *blocks* of measurements: a dictionary of
//! blocks `B_1, ..., B_M` (groups of rows of an orthogonal transform, Kronecker
//! line blocks, overlapping row/column blocks, or Gaussian random blocks) is
//! sampled i.i.d. under a drawing distribution and stacked into a sensing
//! operator. On top of that sit the intra/inter-support block-coherence
//! quantities that govern recovery, a noiseless basis-pursuit solver, dual
//! certificates built by the golfing scheme, rank-based identifiability
//! tests, and Monte-Carlo validation of the deviation bounds.
//!
//! Everything is seeded and deterministic: identical inputs and seeds produce
//! identical outputs, so experiments can be replayed bit for bit.

pub mod blocks;
pub mod certificates;
pub mod coherence;
pub mod error;
pub mod montecarlo;
pub mod operators;
pub mod sampling;
pub mod seeding;
pub mod solver;

pub use blocks::{BlockDictionary, DictionaryKind, DrawingDistribution};
pub use coherence::{CoherenceReport, SupportSet};
pub use error::{Error, Result};
pub use operators::{DenseOperator, LinearOperator};
pub use sampling::SampledOperator;
pub use solver::{RecoveryResult, SparseSignal};
