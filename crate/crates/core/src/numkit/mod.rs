//! Minimal deterministic numeric substrate: dense matrices, seeded
//! randomness, norms and Dirichlet sampling.

mod matrix;
mod rng;

pub use matrix::{clip_to_norm, l2_norm, DenseMatrix};
pub use rng::{sample_dirichlet, SeededRng};
