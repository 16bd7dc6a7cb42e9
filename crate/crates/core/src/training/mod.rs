//! Adversarial training of the decompressor and learned reconstruction.
//!
//! Each step draws a batch of `(x, y)` pairs, where `y` is a crop of an
//! original image and `x` its compressed-then-midpoint-reconstructed version,
//! updates the discriminator once on `(x, y)` versus `(x, G(x))`, then updates
//! the generator once on `BCE(D(x, G(x)) → 1) + λ·L1(G(x), y)`.

mod adam;
mod checkpoint;
mod config;
mod data;
mod infer;
mod losses;
mod trainer;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, RngState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::TrainConfig;
pub use data::{denormalize, load_image_dir, make_pairs, normalize, PairStream, PairedSample};
pub use infer::{infer, infer_file, reconstruct, TILE_BATCH};
pub use losses::{loss_d, loss_g, GeneratorLoss};
pub use trainer::{resume, train, StepMetrics, TrainOutcome, Trainer, METRICS_FILE, METRICS_HEADER};
