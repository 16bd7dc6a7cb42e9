//! The double-pass U-Net generator and the PatchGAN discriminator.

mod discriminator;
mod generator;

pub use discriminator::{Discriminator, DiscriminatorConfig};
pub use generator::{Generator, GeneratorConfig, LayerKind, LayerSpec, SkipPlan};

pub use crate::tensor::{ParamId, ParamKind, ParamStore};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{BatchNormStats, Graph, Mode, Scalar, Shape, Tensor, Var};
use crate::Result;

pub const INIT_STD: f64 = 0.02;
pub const LEAKY_SLOPE: f64 = 0.2;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const KERNEL: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Activation {
    Leaky,
    Relu,
    Tanh,
    Identity,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BnIds {
    gain: ParamId,
    shift: ParamId,
    mean: ParamId,
    var: ParamId,
}

/// Parameter handles of one convolution → batchnorm → activation block.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Block {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub bn: Option<BnIds>,
    pub transposed: bool,
    pub stride: usize,
    pub dropout: bool,
    pub activation: Activation,
}

pub(crate) struct BlockDef<'a> {
    pub name: &'a str,
    pub in_ch: usize,
    pub out_ch: usize,
    pub transposed: bool,
    pub stride: usize,
    pub batchnorm: bool,
    pub dropout: bool,
    pub activation: Activation,
}

/// Registers a block's parameters. Convolutions followed by batchnorm carry no bias,
/// since the batchnorm shift subsumes it.
pub(crate) fn add_block<T: Scalar>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, def: BlockDef<'_>) -> Block {
    let wshape = if def.transposed {
        Shape::new(def.in_ch, def.out_ch, KERNEL, KERNEL)
    } else {
        Shape::new(def.out_ch, def.in_ch, KERNEL, KERNEL)
    };
    let chan = Shape::new(1, def.out_ch, 1, 1);
    let weight = store.add(
        format!("{}.weight", def.name),
        ParamKind::Trainable,
        Tensor::randn(wshape, INIT_STD, rng),
    );
    let (bias, bn) = if def.batchnorm {
        let bn = BnIds {
            gain: store.add(format!("{}.bn.gain", def.name), ParamKind::Trainable, Tensor::full(chan, T::one())),
            shift: store.add(format!("{}.bn.shift", def.name), ParamKind::Trainable, Tensor::zeros(chan)),
            mean: store.add(format!("{}.bn.running_mean", def.name), ParamKind::Buffer, Tensor::zeros(chan)),
            var: store.add(format!("{}.bn.running_var", def.name), ParamKind::Buffer, Tensor::full(chan, T::one())),
        };
        (None, Some(bn))
    } else {
        let b = store.add(format!("{}.bias", def.name), ParamKind::Trainable, Tensor::zeros(chan));
        (Some(b), None)
    };
    Block {
        weight,
        bias,
        bn,
        transposed: def.transposed,
        stride: def.stride,
        dropout: def.dropout,
        activation: def.activation,
    }
}

/// How a forward pass treats a network's parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Params {
    /// Gradients flow into the parameter store.
    Trainable,
    /// Parameters enter the graph as constants; gradients still flow through to the inputs.
    Frozen,
}

pub(crate) struct BlockCtx<'a, T> {
    pub graph: &'a mut Graph<T>,
    pub store: &'a mut ParamStore<T>,
    pub mode: Mode,
    pub params: Params,
    pub dropout_rate: f64,
    pub rng: Option<&'a mut ChaCha8Rng>,
}

impl<T: Scalar> BlockCtx<'_, T> {
    fn param(&mut self, id: ParamId) -> Var {
        match self.params {
            Params::Trainable => self.graph.param(self.store, id),
            Params::Frozen => self.graph.frozen_param(self.store, id),
        }
    }

    pub fn apply(&mut self, block: &Block, x: Var) -> Result<Var> {
        let w = self.param(block.weight);
        let b = block.bias.map(|id| self.param(id));
        let mut h = if block.transposed {
            self.graph.conv_transpose2d(x, w, b, block.stride, 1)?
        } else {
            self.graph.conv2d(x, w, b, block.stride, 1)?
        };
        if let Some(bn) = block.bn {
            let gain = self.param(bn.gain);
            let shift = self.param(bn.shift);
            let (running_mean, running_var) = self.store.get2_mut(bn.mean, bn.var);
            let stats = BatchNormStats {
                running_mean,
                running_var,
                momentum: BN_MOMENTUM,
                eps: BN_EPS,
            };
            h = self.graph.batchnorm2d(h, gain, shift, stats, self.mode)?;
        }
        if block.dropout {
            let rng = self.rng.as_deref_mut().expect("dropout blocks need a noise source");
            h = self.graph.dropout(h, self.dropout_rate, self.mode, rng)?;
        }
        Ok(match block.activation {
            Activation::Leaky => self.graph.leaky_relu(h, LEAKY_SLOPE),
            Activation::Relu => self.graph.relu(h),
            Activation::Tanh => self.graph.tanh(h),
            Activation::Identity => h,
        })
    }
}

pub(crate) fn init_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
