use std::path::Path;

use super::data::{image_to_tensor, sample_to_image};
use super::Checkpoint;
use crate::codec::{decode_file, decompress_naive, PackedImage};
use crate::nets::Generator;
use crate::raster::RawImage;
use crate::tensor::{Graph, Mode, Tensor};
use crate::Result;

/// Tiles passed through the generator per forward call.
pub const TILE_BATCH: usize = 8;

/// Index into `0..n` reflecting about the edge pixels without repeating them.
fn reflect(i: i64, n: u32) -> u32 {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as i64 - 1);
    let m = i.rem_euclid(period);
    (if m < n as i64 { m } else { period - m }) as u32
}

/// Runs the generator in inference mode over `degraded`, tiled into `input_size` squares.
/// Edge tiles are filled by reflection and cropped back afterwards.
pub fn reconstruct(gen: &mut Generator<f32>, degraded: &RawImage) -> Result<RawImage> {
    let s = gen.config().input_size as u32;
    let (w, h) = (degraded.width(), degraded.height());
    let origins: Vec<(u32, u32)> = (0..h.div_ceil(s))
        .flat_map(|ty| (0..w.div_ceil(s)).map(move |tx| (tx * s, ty * s)))
        .collect();
    let mut out = vec![[0u8; 3]; w as usize * h as usize];
    for chunk in origins.chunks(TILE_BATCH) {
        let tiles: Vec<Tensor<f32>> = chunk
            .iter()
            .map(|&(x0, y0)| {
                let tile = RawImage::from_fn(s, s, |x, y| {
                    degraded.get(reflect((x0 + x) as i64, w), reflect((y0 + y) as i64, h))
                });
                image_to_tensor(&tile)
            })
            .collect();
        let mut g = Graph::new();
        let x = g.input(Tensor::stack(&tiles)?);
        let y = gen.forward(&mut g, x, Mode::Infer)?;
        let y = g.value(y);
        for (k, &(x0, y0)) in chunk.iter().enumerate() {
            let tile = sample_to_image(y.sample(k), s, s);
            for ty in 0..s.min(h - y0) {
                for tx in 0..s.min(w - x0) {
                    out[((y0 + ty) * w + x0 + tx) as usize] = tile.get(tx, ty);
                }
            }
        }
    }
    RawImage::new(w, h, out)
}

/// Learned reconstruction of a packed image.
pub fn infer(ck: &Checkpoint, packed: &PackedImage) -> Result<RawImage> {
    if packed.bits().get() as u32 != ck.config.bits_dropped {
        log::warn!(
            "container drops {} bits but the model was trained at {}",
            packed.bits().get(),
            ck.config.bits_dropped
        );
    }
    let mut gen = ck.generator()?;
    reconstruct(&mut gen, &decompress_naive(packed))
}

/// Loads a checkpoint and a `.cdc` file and returns the learned reconstruction.
pub fn infer_file(checkpoint: &Path, packed_file: &Path) -> Result<RawImage> {
    let ck = Checkpoint::load(checkpoint)?;
    let bytes = std::fs::read(packed_file).map_err(crate::Error::file(packed_file))?;
    infer(&ck, &decode_file(&bytes)?)
}
