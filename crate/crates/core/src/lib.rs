#![allow(clippy::unnecessary_cast, clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]
//! Stroke-format sketch generation with a coupled sequence GAN (SkeGAN) and a
//! VAE-GAN (VASkeGAN), plus the Ske-score quality metric.

pub mod batch;
pub mod checkpoint;
pub mod config;
pub mod discriminator;
pub mod error;
pub mod eval;
pub mod nn;
pub mod model;
pub mod render;
pub mod skegan;
pub mod stroke;
pub mod toy;
pub mod train;
pub mod vaskegan;

pub use error::{Error, Result};

/// Floating-point type for parameters and activations.
#[cfg(not(feature = "f32"))]
pub type Real = f64;
#[cfg(feature = "f32")]
pub type Real = f32;

/// Deterministic generator used everywhere randomness is needed.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
