//! Learning from neural-network weights with probing experts.
//!
//! The crate covers the full loop: generating synthetic model zoos,
//! training probing metanetworks and baselines on their weights, routing
//! models to per-tree experts, and the downstream evaluations.

pub mod baselines;
pub mod dense;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod linalg;
pub mod metanet;
pub mod pipeline;
pub mod probex;
pub mod router;
pub mod trainer;
pub mod wzt;
pub mod zoo;

pub use error::{Error, Result};
pub use linalg::{Matrix, Rng, Tensor3, Vector};
pub use metanet::Metanet;
pub use probex::{Activation, ProbeXDims, ProbeXMulti, ProbeXParams};
