//! Unsupervised acoustic unit discovery at desk scale.
//!
//! The toolkit chains disentangled representation learning (a factorized
//! hierarchical VAE with s-vector unification), nonparametric frame
//! clustering (a Dirichlet-process Gaussian mixture), and speaker-adversarial
//! bottleneck training, then evaluates the discovered units with ABX
//! discriminability and bitrate. A synthetic multi-speaker corpus with known
//! phone identities stands in for real speech features so that every stage
//! can be checked against ground truth.

pub mod abx;
pub mod amtl;
pub mod config;
pub mod corpus;
pub mod dpgmm;
pub mod error;
pub mod fhvae;
pub mod io;
pub mod nnkit;
pub mod pipeline;
pub mod units;

pub use error::{AudError, Result};
