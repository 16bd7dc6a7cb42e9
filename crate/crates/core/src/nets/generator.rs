use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{add_block, init_rng, Activation, Block, BlockCtx, BlockDef, Params};
use crate::tensor::{Graph, Mode, ParamStore, Scalar, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    /// Blocks per down/up stack; the network has `4 × levels_per_stack` layers.
    pub levels_per_stack: usize,
    pub base_channels: usize,
    /// Side of the square input; must be divisible by `2^levels_per_stack`.
    pub input_size: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            levels_per_stack: 3,
            base_channels: 16,
            input_size: 64,
            dropout_rate: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Down,
    Up,
}

/// Static description of one generator layer (1-based index).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub index: usize,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Spatial side of the layer's output.
    pub out_size: usize,
    pub batchnorm: bool,
    pub dropout: bool,
}

/// Skip connections `(i, n - i)` for `1 ≤ i < n/2`, counted over all `n` layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkipPlan {
    pub layers: usize,
    pub pairs: Vec<(usize, usize)>,
}

impl SkipPlan {
    pub fn new(layers: usize) -> Self {
        let pairs = (1..layers.div_ceil(2)).map(|i| (i, layers - i)).collect();
        Self { layers, pairs }
    }

    /// Source layer whose output is concatenated after `dest`.
    pub fn source_for(&self, dest: usize) -> Option<usize> {
        self.pairs.iter().find(|&&(_, d)| d == dest).map(|&(s, _)| s)
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let l = self.levels_per_stack;
        if l == 0 || l > 16 {
            return Err(Error::Config(format!("levels_per_stack must be in 1..=16, got {l}")));
        }
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be positive".into()));
        }
        if self.input_size == 0 || !self.input_size.is_multiple_of(1 << l) {
            return Err(Error::Config(format!(
                "input_size {} is not divisible by 2^{l}",
                self.input_size
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout rate must be in [0, 1), got {}", self.dropout_rate)));
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        4 * self.levels_per_stack
    }

    pub fn skip_plan(&self) -> SkipPlan {
        SkipPlan::new(self.num_layers())
    }

    /// Width of the `level`-th downsampling block (1-based): base doubled per level, capped at 8× base.
    fn level_channels(&self, level: usize) -> usize {
        self.base_channels * (1usize << (level - 1).min(3))
    }

    /// Per-layer structure: down-stack-1, up-stack-1, down-stack-2, up-stack-2.
    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let l = self.levels_per_stack;
        let n = self.num_layers();
        let skips = self.skip_plan();
        let mut specs: Vec<LayerSpec> = Vec::with_capacity(n);
        let mut size = self.input_size;
        let mut in_ch = 3;
        for index in 1..=n {
            let stack = (index - 1) / l;
            let pos = (index - 1) % l + 1;
            let kind = if stack.is_multiple_of(2) { LayerKind::Down } else { LayerKind::Up };
            let out_channels = match kind {
                LayerKind::Down => self.level_channels(pos),
                LayerKind::Up if pos < l => self.level_channels(l - pos),
                LayerKind::Up if index == n => 3,
                LayerKind::Up => self.base_channels,
            };
            size = match kind {
                LayerKind::Down => size / 2,
                LayerKind::Up => size * 2,
            };
            let spec = LayerSpec {
                index,
                kind,
                in_channels: in_ch,
                out_channels,
                out_size: size,
                batchnorm: index != 1 && index != n,
                dropout: kind == LayerKind::Up && pos <= l.min(3) && index != n && self.dropout_rate > 0.0,
            };
            in_ch = out_channels + skips.source_for(index).map_or(0, |s| specs[s - 1].out_channels);
            specs.push(spec);
        }
        specs
    }

    /// Spatial side of the input followed by each layer's output.
    pub fn spatial_trace(&self) -> Vec<usize> {
        std::iter::once(self.input_size)
            .chain(self.layer_specs().iter().map(|s| s.out_size))
            .collect()
    }
}

/// Double-pass U-Net: two encoder/decoder passes through a bottleneck, with skip
/// connections from layer `i` to layer `n - i` over the whole layer sequence.
pub struct Generator<T> {
    cfg: GeneratorConfig,
    specs: Vec<LayerSpec>,
    blocks: Vec<Block>,
    skips: SkipPlan,
    params: ParamStore<T>,
    noise: ChaCha8Rng,
}

impl<T: Scalar> Generator<T> {
    pub fn new(cfg: GeneratorConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = init_rng(cfg.seed, 0);
        let mut params = ParamStore::new();
        let specs = cfg.layer_specs();
        let n = specs.len();
        let blocks = specs
            .iter()
            .map(|s| {
                let name = format!("gen.l{:02}", s.index);
                add_block(
                    &mut params,
                    &mut rng,
                    BlockDef {
                        name: &name,
                        in_ch: s.in_channels,
                        out_ch: s.out_channels,
                        transposed: s.kind == LayerKind::Up,
                        stride: 2,
                        batchnorm: s.batchnorm,
                        dropout: s.dropout,
                        activation: match s.kind {
                            _ if s.index == n => Activation::Tanh,
                            LayerKind::Down => Activation::Leaky,
                            LayerKind::Up => Activation::Relu,
                        },
                    },
                )
            })
            .collect();
        Ok(Self {
            skips: cfg.skip_plan(),
            noise: init_rng(cfg.seed, 1),
            cfg,
            specs,
            blocks,
            params,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn layer_specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn skip_plan(&self) -> &SkipPlan {
        &self.skips
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Dropout noise source; part of the training state.
    pub fn noise(&self) -> &ChaCha8Rng {
        &self.noise
    }

    pub fn set_noise(&mut self, rng: ChaCha8Rng) {
        self.noise = rng;
    }

    /// Maps a normalized `(N, 3, S, S)` batch to an output of the same shape in `[-1, 1]`.
    pub fn forward(&mut self, graph: &mut Graph<T>, x: Var, mode: Mode) -> Result<Var> {
        let s = graph.shape(x);
        let size = self.cfg.input_size;
        if s.c() != 3 || s.h() != size || s.w() != size {
            return Err(Error::shape("generator_forward", &s.0, &[s.n(), 3, size, size]));
        }
        let mut ctx = BlockCtx {
            graph,
            store: &mut self.params,
            mode,
            params: Params::Trainable,
            dropout_rate: self.cfg.dropout_rate,
            rng: Some(&mut self.noise),
        };
        let mut outputs: Vec<Var> = Vec::with_capacity(self.blocks.len());
        let mut h = x;
        for (i, block) in self.blocks.iter().enumerate() {
            let y = ctx.apply(block, h)?;
            outputs.push(y);
            h = match self.skips.source_for(i + 1) {
                Some(src) => ctx.graph.concat_channels(y, outputs[src - 1])?,
                None => y,
            };
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Shape, Tensor};
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn input(n: usize, size: usize, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = Tensor::<f32>::randn(Shape::new(n, 3, size, size), 0.5, &mut rng);
        let data = t.data().iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        Tensor::from_vec(t.shape(), data).unwrap()
    }

    #[test]
    fn skip_pairs_for_three_levels() {
        let cfg = GeneratorConfig::default();
        assert_eq!(cfg.num_layers(), 12);
        assert_eq!(cfg.skip_plan().pairs, vec![(1, 11), (2, 10), (3, 9), (4, 8), (5, 7)]);
        for l in 1..=4 {
            let plan = SkipPlan::new(4 * l);
            assert!(plan.pairs.iter().all(|&(s, d)| s + d == 4 * l));
            assert_eq!(plan.pairs.len(), 2 * l - 1);
        }
    }

    #[test]
    fn spatial_trace_three_levels() {
        let cfg = GeneratorConfig::default();
        assert_eq!(cfg.spatial_trace(), vec![64, 32, 16, 8, 16, 32, 64, 32, 16, 8, 16, 32, 64]);
        let specs = cfg.layer_specs();
        for (s, d) in cfg.skip_plan().pairs {
            assert_eq!(specs[s - 1].out_size, specs[d - 1].out_size);
        }
    }

    #[test]
    fn layer_structure() {
        let specs = GeneratorConfig::default().layer_specs();
        let outs: Vec<usize> = specs.iter().map(|s| s.out_channels).collect();
        assert_eq!(outs, vec![16, 32, 64, 32, 16, 16, 16, 32, 64, 32, 16, 3]);
        let ins: Vec<usize> = specs.iter().map(|s| s.in_channels).collect();
        assert_eq!(ins, vec![3, 16, 32, 64, 32, 16, 16, 32, 64, 128, 64, 32]);
        assert!(!specs[0].batchnorm && !specs[11].batchnorm);
        assert!(specs[1..11].iter().all(|s| s.batchnorm));
        let dropout: Vec<usize> = specs.iter().filter(|s| s.dropout).map(|s| s.index).collect();
        assert_eq!(dropout, vec![4, 5, 6, 10, 11]);
    }

    #[test]
    fn channel_cap_at_eight_times_base() {
        let cfg = GeneratorConfig {
            levels_per_stack: 5,
            base_channels: 2,
            input_size: 64,
            ..GeneratorConfig::default()
        };
        let outs: Vec<usize> = cfg.layer_specs().iter().take(5).map(|s| s.out_channels).collect();
        assert_eq!(outs, vec![2, 4, 8, 16, 16]);
    }

    #[test]
    fn default_parameter_count() {
        // Hand count: conv weights + first/last biases + batchnorm gain/shift.
        let g = Generator::<f32>::new(GeneratorConfig::default()).unwrap();
        assert_eq!(g.params().num_trainable(), 256_915);
    }

    #[test]
    fn invalid_size_rejected() {
        let cfg = GeneratorConfig {
            input_size: 60,
            ..GeneratorConfig::default()
        };
        assert!(matches!(Generator::<f32>::new(cfg), Err(Error::Config(_))));
    }

    #[test]
    fn same_seed_same_parameters() {
        let cfg = GeneratorConfig {
            dropout_rate: 0.0,
            seed: 9,
            ..GeneratorConfig::default()
        };
        let a = Generator::<f32>::new(cfg.clone()).unwrap();
        let b = Generator::<f32>::new(cfg).unwrap();
        for id in a.params().ids() {
            assert_eq!(a.params().get(id).data(), b.params().get(id).data());
        }
    }

    #[test]
    fn forward_shape_range_and_modes() {
        let mut gen = Generator::<f32>::new(GeneratorConfig::default()).unwrap();
        let x = input(2, 64, 1);
        let run = |gen: &mut Generator<f32>, mode| {
            let mut g = Graph::new();
            let xv = g.input(x.clone());
            let y = gen.forward(&mut g, xv, mode).unwrap();
            g.value(y).clone()
        };
        let a = run(&mut gen, Mode::Infer);
        let b = run(&mut gen, Mode::Infer);
        assert_eq!(a.shape(), Shape::new(2, 3, 64, 64));
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| (-1.0..=1.0).contains(v)));

        let t1 = run(&mut gen, Mode::Train);
        let t2 = run(&mut gen, Mode::Train);
        let differing = t1.data().iter().zip(t2.data()).filter(|(p, q)| p != q).count();
        assert!(differing * 2 > t1.len(), "{differing} of {} differ", t1.len());
    }

    #[test]
    fn wrong_input_size() {
        let mut gen = Generator::<f32>::new(GeneratorConfig::default()).unwrap();
        let mut g = Graph::new();
        let x = g.input(input(1, 32, 1));
        assert!(matches!(gen.forward(&mut g, x, Mode::Infer), Err(Error::Shape { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn preserves_spatial_dims(levels in 1usize..=3, size_pow in 3u32..=6, seed in 0u64..4) {
            let size = 1usize << size_pow;
            let cfg = GeneratorConfig { levels_per_stack: levels, base_channels: 4, input_size: size, dropout_rate: 0.5, seed };
            let mut gen = Generator::<f32>::new(cfg).unwrap();
            let mut g = Graph::new();
            let x = g.input(input(2, size, seed));
            let y = gen.forward(&mut g, x, Mode::Infer).unwrap();
            prop_assert_eq!(g.shape(y), Shape::new(2, 3, size, size));
            prop_assert!(g.value(y).data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }
}
