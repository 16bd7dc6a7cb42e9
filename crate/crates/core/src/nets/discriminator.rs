use serde::{Deserialize, Serialize};

use super::{add_block, init_rng, Activation, Block, BlockCtx, BlockDef, Params, KERNEL};
use crate::tensor::{Graph, Mode, ParamStore, Scalar, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    /// Stride-2 blocks before the two stride-1 layers.
    pub num_downsample: usize,
    pub base_channels: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            num_downsample: 3,
            base_channels: 16,
        }
    }
}

impl DiscriminatorConfig {
    /// Side of the patch-logit grid for a square input, or `None` if it would vanish.
    pub fn output_size(&self, input: usize) -> Option<usize> {
        let conv = |n: usize, stride: usize| (n + 2).checked_sub(KERNEL).map(|s| s / stride + 1);
        let mut n = input;
        for _ in 0..self.num_downsample {
            n = conv(n, 2)?;
        }
        conv(conv(n, 1)?, 1)
    }

    pub fn validate(&self, input: usize) -> Result<()> {
        if self.base_channels == 0 || self.num_downsample == 0 {
            return Err(Error::Config("discriminator needs at least one downsampling block and channel".into()));
        }
        match self.output_size(input) {
            Some(n) if n >= 1 => Ok(()),
            _ => Err(Error::Config(format!(
                "{} downsampling blocks leave no output for {input}x{input} inputs",
                self.num_downsample
            ))),
        }
    }

    fn channels(&self, block: usize) -> usize {
        self.base_channels * (1usize << block.min(3))
    }
}

/// PatchGAN discriminator conditioned on the input image: it sees the channel
/// concatenation of `(x, y)` and emits one real/fake logit per receptive-field patch.
pub struct Discriminator<T> {
    cfg: DiscriminatorConfig,
    blocks: Vec<Block>,
    params: ParamStore<T>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(cfg: DiscriminatorConfig, seed: u64) -> Result<Self> {
        if cfg.base_channels == 0 || cfg.num_downsample == 0 {
            return Err(Error::Config("discriminator needs at least one downsampling block and channel".into()));
        }
        let mut rng = init_rng(seed, 2);
        let mut params = ParamStore::new();
        let mut blocks = Vec::new();
        let mut in_ch = 6;
        for i in 0..=cfg.num_downsample {
            let out_ch = cfg.channels(i);
            let name = format!("disc.l{:02}", i + 1);
            blocks.push(add_block(
                &mut params,
                &mut rng,
                BlockDef {
                    name: &name,
                    in_ch,
                    out_ch,
                    transposed: false,
                    stride: if i < cfg.num_downsample { 2 } else { 1 },
                    batchnorm: i > 0,
                    dropout: false,
                    activation: Activation::Leaky,
                },
            ));
            in_ch = out_ch;
        }
        let name = format!("disc.l{:02}", cfg.num_downsample + 2);
        blocks.push(add_block(
            &mut params,
            &mut rng,
            BlockDef {
                name: &name,
                in_ch,
                out_ch: 1,
                transposed: false,
                stride: 1,
                batchnorm: false,
                dropout: false,
                activation: Activation::Identity,
            },
        ));
        Ok(Self { cfg, blocks, params })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Patch logits `(N, 1, m, m)` for the pair `(x, y)`; no sigmoid is applied.
    pub fn forward(&mut self, graph: &mut Graph<T>, x: Var, y: Var, mode: Mode, params: Params) -> Result<Var> {
        let (xs, ys) = (graph.shape(x), graph.shape(y));
        if xs != ys || xs.c() != 3 {
            return Err(Error::shape("discriminator_forward", &xs.0, &ys.0));
        }
        let mut h = graph.concat_channels(x, y)?;
        let mut ctx = BlockCtx {
            graph,
            store: &mut self.params,
            mode,
            params,
            dropout_rate: 0.0,
            rng: None,
        };
        for block in &self.blocks {
            h = ctx.apply(block, h)?;
        }
        Ok(h)
    }
}
