//! Inference-time latent correction for small denoising diffusion models.
//!
//! The crate trains a conditional DDPM on synthetic, deliberately biased
//! data, learns a contrastive projector separating fair ("positive") from
//! stereotyped ("negative") exemplars, and steers the final sampling steps
//! toward the positive set with analytic latent gradients.

pub mod autoencoder;
pub mod bench;
pub mod checkpoint;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod guidance;
pub mod io;
pub mod latent;
pub mod model;
pub mod prior;
pub mod schedule;

pub use error::{Error, Result};
pub use latent::Latent;
