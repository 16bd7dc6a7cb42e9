#![allow(dead_code)]

use std::path::Path;

use cdc_core::nets::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, Params};
use cdc_core::raster::RawImage;
use cdc_core::tensor::{GradCheck, GradCheckReport, Graph, Mode, ParamStore, Shape, Tensor};
use cdc_core::training::{loss_g, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A smooth synthetic 64x64 scene: a sine ramp, a vertical gradient, and a soft disc.
pub fn scene(k: u32) -> RawImage {
    let fk = k as f64;
    RawImage::from_fn(64, 64, |x, y| {
        let (fx, fy) = (x as f64 / 63.0, y as f64 / 63.0);
        let r = 255.0 * (0.5 + 0.5 * (fx * (2.0 + fk) + fk).sin());
        let g = 255.0 * (fy * 0.8 + 0.1 * (fk * 0.3).cos());
        let (dx, dy) = (fx - 0.3 - 0.05 * fk, fy - 0.6);
        let b = 255.0 * (1.0 - (dx * dx + dy * dy).sqrt()).clamp(0.0, 1.0);
        [r.round() as u8, g.round().clamp(0.0, 255.0) as u8, b.round() as u8]
    })
}

pub fn write_scenes(dir: &Path, n: u32) {
    for k in 0..n {
        scene(k).save(dir.join(format!("scene{k:02}.ppm"))).unwrap();
    }
}

pub fn noise_image(w: u32, h: u32, seed: u64) -> RawImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RawImage::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()])
}

/// Generator and discriminator small enough for fast training runs on 16x16 crops.
pub fn tiny_config(steps: u64, seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        steps,
        checkpoint_every: 2,
        generator: GeneratorConfig { levels_per_stack: 2, base_channels: 4, input_size: 16, ..Default::default() },
        discriminator: DiscriminatorConfig { num_downsample: 2, base_channels: 4 },
        ..TrainConfig::default()
    }
    .with_crop_and_seed(16, seed)
}

/// Finite-difference check of the full generator objective
/// `BCE(D(x, G(x)) -> 1) + lambda * |G(x) - y|` with respect to every generator parameter,
/// at 64-bit on 16x16 inputs. Dropout masks are held fixed between evaluations.
pub fn generator_objective_gradcheck(max_entries: Option<usize>) -> GradCheckReport {
    let gcfg = GeneratorConfig { levels_per_stack: 2, base_channels: 4, input_size: 16, dropout_rate: 0.5, seed: 11 };
    let mut gen = Generator::<f64>::new(gcfg).unwrap();
    let mut disc = Discriminator::<f64>::new(DiscriminatorConfig { num_downsample: 2, base_channels: 4 }, 12).unwrap();
    let noise = gen.noise().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let shape = Shape::new(2, 3, 16, 16);
    let x = Tensor::from_vec(shape, (0..shape.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let y = Tensor::from_vec(shape, (0..shape.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let mut store = std::mem::take(gen.params_mut());
    let check = GradCheck { max_entries, seed: 14, ..GradCheck::default() };
    check
        .run(&mut store, |g: &mut Graph<f64>, store: &mut ParamStore<f64>| {
            std::mem::swap(gen.params_mut(), store);
            gen.set_noise(noise.clone());
            let xv = g.input(x.clone());
            let yv = g.input(y.clone());
            let out = gen
                .forward(g, xv, Mode::Train)
                .and_then(|y_hat| {
                    let logits = disc.forward(g, xv, y_hat, Mode::Train, Params::Frozen)?;
                    Ok(loss_g(g, logits, y_hat, yv, 100.0)?.total)
                });
            std::mem::swap(gen.params_mut(), store);
            out
        })
        .unwrap()
}
