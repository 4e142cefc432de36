//! Desk-scale laboratory for modern style-based GAN mechanisms on the CPU:
//! weight modulation/demodulation, path-length and R1 regularization with a
//! lazy schedule, skip/residual generator and discriminator variants,
//! resolution-usage analysis, perceptual-path-length style metrics, and
//! latent-space projection.
//!
//! Everything runs on a small bundled tensor engine with reverse-mode
//! differentiation that supports gradient-of-gradient, which the
//! regularizers require. All randomness is seeded and all kernels use a
//! fixed reduction order, so results are reproducible bit-for-bit.

pub mod autograd;
pub mod check;
pub mod checkpoint;
pub mod config;
pub mod csvio;
pub mod dataset;
pub mod eigen;
pub mod imageio;
mod kernels;
pub mod metrics;
pub mod modconv;
pub mod networks;
pub mod ops;
pub mod params;
pub mod projection;
pub mod training;
pub mod rng;
pub mod tensor;

pub use autograd::{backward, Gradients};
pub use rng::Rng;
pub use tensor::{no_grad, Tensor};
