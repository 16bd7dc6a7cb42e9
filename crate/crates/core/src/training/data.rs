use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{compress_image, decompress_naive, BitsDropped};
use crate::raster::{is_raster_path, RawImage};
use crate::tensor::{Scalar, Shape, Tensor};
use crate::{Error, Result};

/// RNG stream used for crop selection, distinct from the network streams.
const DATA_STREAM: u64 = 3;

/// Maps a channel value in `[0, 255]` linearly onto `[-1, 1]`.
pub fn normalize(v: u8) -> f64 {
    v as f64 / 127.5 - 1.0
}

/// Inverse of [`normalize`], clamped to `[0, 255]` and rounded.
pub fn denormalize(v: f64) -> u8 {
    ((v + 1.0) * 127.5).clamp(0.0, 255.0).round() as u8
}

/// A `(1, 3, H, W)` tensor of normalized channel planes.
pub fn image_to_tensor<T: Scalar>(img: &RawImage) -> Tensor<T> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let plane = w * h;
    let mut data = vec![T::zero(); 3 * plane];
    for (i, px) in img.pixels().iter().enumerate() {
        for c in 0..3 {
            data[c * plane + i] = T::lit(normalize(px[c]));
        }
    }
    Tensor::from_vec(Shape::new(1, 3, h, w), data).expect("plane sizes agree")
}

/// Converts one `(3, H, W)` sample of normalized values back to pixels.
pub fn sample_to_image<T: Scalar>(sample: &[T], width: u32, height: u32) -> RawImage {
    let plane = width as usize * height as usize;
    assert_eq!(sample.len(), 3 * plane, "sample does not hold three {width}x{height} planes");
    let at = |c: usize, i: usize| denormalize(sample[c * plane + i].to_f64().unwrap_or(0.0));
    let pixels = (0..plane).map(|i| [at(0, i), at(1, i), at(2, i)]).collect();
    RawImage::new(width, height, pixels).expect("pixel count matches")
}

/// All decodable rasters in `dir`, sorted by file name. Undecodable files are skipped with a warning.
pub fn load_image_dir(dir: &Path) -> Result<Vec<(String, RawImage)>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(Error::file(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_raster_path(p))
        .collect();
    paths.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    let mut images = Vec::with_capacity(paths.len());
    for p in paths {
        match RawImage::load(&p) {
            Ok(img) => {
                let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                images.push((name, img));
            }
            Err(e) => log::warn!("skipping {}: {e}", p.display()),
        }
    }
    Ok(images)
}

#[derive(Debug, Clone)]
pub struct PairedSample {
    /// Compressed then midpoint-reconstructed crop, normalized, shape `(1, 3, S, S)`.
    pub x: Tensor<f32>,
    /// The original crop, normalized.
    pub y: Tensor<f32>,
}

/// Deterministic endless stream of training pairs drawn from a fixed image set.
#[derive(Debug, Clone)]
pub struct PairStream {
    images: Vec<(String, RawImage)>,
    bits: BitsDropped,
    crop: u32,
    rng: ChaCha8Rng,
}

/// Loads `dir` and returns a pair stream seeded by `seed`.
pub fn make_pairs(dir: &Path, bits: BitsDropped, crop_size: usize, seed: u64) -> Result<PairStream> {
    PairStream::new(load_image_dir(dir)?, bits, crop_size, seed).map_err(|e| match e {
        Error::NoData(_) => Error::NoData(dir.to_path_buf()),
        other => other,
    })
}

impl PairStream {
    /// Images smaller than the crop in either dimension are dropped with a warning.
    pub fn new(images: Vec<(String, RawImage)>, bits: BitsDropped, crop_size: usize, seed: u64) -> Result<Self> {
        let crop = u32::try_from(crop_size)
            .ok()
            .filter(|&c| c > 0)
            .ok_or_else(|| Error::InvalidParameter(format!("crop size {crop_size}")))?;
        let images: Vec<_> = images
            .into_iter()
            .filter(|(name, img)| {
                let fits = img.width() >= crop && img.height() >= crop;
                if !fits {
                    log::warn!("skipping {name}: {}x{} is smaller than the {crop}px crop", img.width(), img.height());
                }
                fits
            })
            .collect();
        if images.is_empty() {
            return Err(Error::NoData(Default::default()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(DATA_STREAM);
        Ok(Self { images, bits, crop, rng })
    }

    pub fn images(&self) -> &[(String, RawImage)] {
        &self.images
    }

    pub fn bits(&self) -> BitsDropped {
        self.bits
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    pub fn set_rng(&mut self, rng: ChaCha8Rng) {
        self.rng = rng;
    }

    /// Builds the pair for a given crop of an original.
    pub fn pair_for(&self, original: &RawImage) -> PairedSample {
        let degraded = decompress_naive(&compress_image(original, self.bits));
        PairedSample {
            x: image_to_tensor(&degraded),
            y: image_to_tensor(original),
        }
    }

    pub fn next_sample(&mut self) -> PairedSample {
        let idx = self.rng.random_range(0..self.images.len());
        let img = &self.images[idx].1;
        let x0 = self.rng.random_range(0..=img.width() - self.crop);
        let y0 = self.rng.random_range(0..=img.height() - self.crop);
        let crop = img.crop(x0, y0, self.crop, self.crop).expect("crop lies inside the image");
        self.pair_for(&crop)
    }

    /// `n` samples stacked into `(n, 3, S, S)` input and target batches.
    pub fn next_batch(&mut self, n: usize) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let (xs, ys): (Vec<_>, Vec<_>) = (0..n).map(|_| self.next_sample()).map(|p| (p.x, p.y)).unzip();
        Ok((Tensor::stack(&xs)?, Tensor::stack(&ys)?))
    }
}
