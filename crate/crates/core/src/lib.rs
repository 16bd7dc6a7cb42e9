//! Colour-density compression: a bit-depth-reduction codec with a packed
//! container format, and a conditional-GAN decompressor that learns to undo
//! the quantization.
//!
//! The crate is organised bottom-up:
//!
//! * [`codec`] and [`raster`]: quantization, bit packing, the `.cdc` container and PPM I/O.
//! * [`tensor`]: a small NCHW tensor engine with hand-written reverse-mode rules.
//! * [`nets`]: the double-pass U-Net generator and the PatchGAN discriminator.
//! * [`training`]: losses, Adam, paired-data synthesis, the training loop, checkpoints and inference.
//! * [`metrics`]: PSNR/MAE evaluation of the learned decompressor against the midpoint baseline.
//! * [`study`]: the HTTP service that runs the original-vs-generated perceptual study.

pub mod codec;
pub mod error;
pub mod metrics;
pub mod nets;
pub mod raster;
pub mod study;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
