use serde::{Deserialize, Serialize};

use super::AdamConfig;
use crate::codec::BitsDropped;
use crate::nets::{DiscriminatorConfig, GeneratorConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the L1 term in the generator objective.
    pub lambda: f64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub bits_dropped: u32,
    /// Side of the random training crops; equals the generator input size.
    pub crop_size: usize,
    pub seed: u64,
    /// Save a checkpoint every this many steps (0 disables periodic saves).
    pub checkpoint_every: u64,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 100.0,
            learning_rate: 2e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            batch_size: 4,
            steps: 200,
            bits_dropped: 5,
            crop_size: 64,
            seed: 0,
            checkpoint_every: 100,
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Keeps the generator's input size and seed in step with the crop size and run seed.
    pub fn with_crop_and_seed(mut self, crop_size: usize, seed: u64) -> Self {
        self.crop_size = crop_size;
        self.generator.input_size = crop_size;
        self.seed = seed;
        self.generator.seed = seed;
        self
    }

    pub fn bits(&self) -> Result<BitsDropped> {
        BitsDropped::new(self.bits_dropped)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be ≥ 0, got {}", self.lambda)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        for (name, beta) in [("beta1", self.adam_beta1), ("beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {beta}")));
            }
        }
        if self.adam_epsilon.is_nan() || self.adam_epsilon <= 0.0 {
            return Err(Error::Config("adam epsilon must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.crop_size != self.generator.input_size {
            return Err(Error::Config(format!(
                "crop size {} does not match generator input size {}",
                self.crop_size, self.generator.input_size
            )));
        }
        self.bits()?;
        self.generator.validate()?;
        self.discriminator.validate(self.crop_size)
    }
}
