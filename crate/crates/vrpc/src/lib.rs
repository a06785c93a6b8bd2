//! Variable-rate lossy compression for raw 3D point clouds.
//!
//! A learned transform maps a point set to a latent vector, a factorized
//! entropy model prices each latent element, and an integer range coder
//! emits the bitstream. Training weights the per-element rate by an
//! exponentially decaying schedule so one model serves many bitrates via
//! latent truncation. A deterministic octree codec provides the non-learned
//! baseline curve.

pub mod autodiff;
pub mod codec;
pub mod coder;
pub mod entropy;
pub mod error;
pub mod geom;
pub mod metrics;
pub mod network;
pub mod octree;
pub mod pointset;
pub mod trainer;

pub use error::Error;
pub type Result<T> = std::result::Result<T, Error>;
