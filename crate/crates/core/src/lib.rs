//! Uncertainty-aware semantic augmentation for sequence-to-sequence
//! translation, at desk scale.
//!
//! The toolkit trains a small Transformer translator alongside a semantic
//! constrained network: a reverse model synthesizes multiple
//! semantically-equivalent sources per target via entropy-controlled
//! sampling, the network constrains their latent semantics into a shared
//! Gaussian region, and training optimizes the translation losses of both
//! source variants plus the annealed KL agreement term.

pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod manifest;
pub mod metrics;
pub mod params;
pub mod sampler;
pub mod scn;
pub mod seq2seq;
pub mod tensor;
pub mod toy;
pub mod trainer;

pub use error::{Error, Result};
