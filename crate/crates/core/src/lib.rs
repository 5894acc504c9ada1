//! Autoencoder-based lossy geometry codec for point clouds.
//!
//! The pipeline downsamples a cloud with farthest point sampling, maps it to a
//! latent vector with a per-point MLP and a feature-wise max, rounds the
//! latent, entropy-codes it against a learned factorized prior, and
//! reconstructs the cloud with a fully connected decoder. Everything in this
//! crate is `no_std` (with `alloc`): file formats, the dataset layout and the
//! command line live in the companion `pcae` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod bitstream;
mod bytes;
pub mod chamfer;
pub mod entropy;
pub mod evaluation;
mod error;
pub mod geometry;
pub mod gradcheck;
pub mod metrics;
pub mod model_format;
pub mod network;
pub mod range_coder;
pub mod sampling;
pub mod training;

pub use bytes::fnv1a64;
pub use error::{Error, Result};
pub use geometry::{NormalizationTransform, Point3, PointCloud, TriangleMesh};
pub use network::{ArchitectureConfig, ModelParameters};

/// Deterministic RNG used everywhere a seed is accepted.
pub type Rng = rand_chacha::ChaCha8Rng;

pub(crate) fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
