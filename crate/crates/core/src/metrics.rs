//! Image-quality metrics and the model-versus-midpoint evaluation report.

use std::fmt::Write as _;
use std::path::Path;

use num_rational::Ratio;

use crate::codec::{compress_image, decompress_naive, BitsDropped};
use crate::nets::Generator;
use crate::raster::RawImage;
use crate::training::{load_image_dir, reconstruct, Checkpoint};
use crate::{Error, Result};

fn check_dims(op: &'static str, a: &RawImage, b: &RawImage) -> Result<()> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::shape(
            op,
            &[a.width() as usize, a.height() as usize],
            &[b.width() as usize, b.height() as usize],
        ));
    }
    Ok(())
}

fn channel_diffs<'a>(a: &'a RawImage, b: &'a RawImage) -> impl Iterator<Item = u8> + 'a {
    a.pixels()
        .iter()
        .zip(b.pixels())
        .flat_map(|(p, q)| (0..3).map(move |c| p[c].abs_diff(q[c])))
}

/// Mean squared channel error.
pub fn mse(a: &RawImage, b: &RawImage) -> Result<f64> {
    check_dims("mse", a, b)?;
    let n = 3 * a.pixels().len();
    let sum: u64 = channel_diffs(a, b).map(|d| (d as u64) * (d as u64)).sum();
    Ok(if n == 0 { 0.0 } else { sum as f64 / n as f64 })
}

/// Peak signal-to-noise ratio in dB; identical images give `f64::INFINITY`.
pub fn psnr(a: &RawImage, b: &RawImage) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { 20.0 * (255.0 / m.sqrt()).log10() })
}

/// Mean absolute channel error in `[0, 255]` units.
pub fn mae(a: &RawImage, b: &RawImage) -> Result<f64> {
    check_dims("mae", a, b)?;
    let n = 3 * a.pixels().len();
    let sum: u64 = channel_diffs(a, b).map(u64::from).sum();
    Ok(if n == 0 { 0.0 } else { sum as f64 / n as f64 })
}

pub fn max_abs_err(a: &RawImage, b: &RawImage) -> Result<u8> {
    check_dims("max_abs_err", a, b)?;
    Ok(channel_diffs(a, b).max().unwrap_or(0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub name: String,
    pub width: u32,
    pub height: u32,
    pub psnr_model: f64,
    pub psnr_naive: f64,
    pub mae_model: f64,
    pub mae_naive: f64,
    pub max_abs_err_model: f64,
    pub max_abs_err_naive: f64,
}

impl EvalRow {
    /// Scores the learned and midpoint reconstructions of `original` at `bits`.
    pub fn score(name: &str, original: &RawImage, gen: &mut Generator<f32>, bits: BitsDropped) -> Result<Self> {
        let naive = decompress_naive(&compress_image(original, bits));
        let model = reconstruct(gen, &naive)?;
        Ok(Self {
            name: name.to_owned(),
            width: original.width(),
            height: original.height(),
            psnr_model: psnr(&model, original)?,
            psnr_naive: psnr(&naive, original)?,
            mae_model: mae(&model, original)?,
            mae_naive: mae(&naive, original)?,
            max_abs_err_model: max_abs_err(&model, original)? as f64,
            max_abs_err_naive: max_abs_err(&naive, original)? as f64,
        })
    }

    fn values(&self) -> [f64; 6] {
        [
            self.psnr_model,
            self.psnr_naive,
            self.mae_model,
            self.mae_naive,
            self.max_abs_err_model,
            self.max_abs_err_naive,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub bits: BitsDropped,
    pub compression_factor: Ratio<u32>,
    /// Per-image rows sorted by name.
    pub rows: Vec<EvalRow>,
    /// Means of the per-image rows, named `"mean"`.
    pub aggregate: EvalRow,
}

const COLUMNS: [&str; 6] = [
    "psnr_model",
    "psnr_naive",
    "mae_model",
    "mae_naive",
    "max_abs_err_model",
    "max_abs_err_naive",
];

impl EvalReport {
    pub fn from_rows(bits: BitsDropped, mut rows: Vec<EvalRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::NoData(Default::default()));
        }
        rows.sort_by(|a, b| a.name.cmp(&b.name));
        let n = rows.len() as f64;
        let mut sums = [0.0; 6];
        for r in &rows {
            for (s, v) in sums.iter_mut().zip(r.values()) {
                *s += v;
            }
        }
        let m = sums.map(|s| s / n);
        let aggregate = EvalRow {
            name: "mean".into(),
            width: 0,
            height: 0,
            psnr_model: m[0],
            psnr_naive: m[1],
            mae_model: m[2],
            mae_naive: m[3],
            max_abs_err_model: m[4],
            max_abs_err_naive: m[5],
        };
        Ok(Self { bits, compression_factor: bits.compression_factor(), rows, aggregate })
    }

    pub fn count(&self) -> usize {
        self.rows.len()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("name,width,height,{}\n", COLUMNS.join(","));
        for r in self.rows.iter().chain([&self.aggregate]) {
            let _ = write!(out, "{},{},{}", r.name, r.width, r.height);
            for v in r.values() {
                let _ = write!(out, ",{}", fmt_value(v, 6));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_table(&self) -> String {
        let f = self.compression_factor;
        let mut out = format!(
            "bits dropped {}  nominal factor {:.3}  images {}\n",
            self.bits.get(),
            *f.numer() as f64 / *f.denom() as f64,
            self.count()
        );
        let name_w = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(9);
        let _ = write!(out, "{:<name_w$}", "image");
        for c in COLUMNS {
            let _ = write!(out, " {c:>17}");
        }
        out.push('\n');
        for r in self.rows.iter().chain([&self.aggregate]) {
            let _ = write!(out, "{:<name_w$}", r.name);
            for v in r.values() {
                let _ = write!(out, " {:>17}", fmt_value(v, 3));
            }
            out.push('\n');
        }
        out
    }
}

fn fmt_value(v: f64, places: usize) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.places$}")
    }
}

/// Scores every image in `dir` with the generator stored in `checkpoint`.
pub fn evaluate(checkpoint: &Path, dir: &Path, bits: BitsDropped) -> Result<EvalReport> {
    let mut gen = Checkpoint::load(checkpoint)?.generator()?;
    evaluate_images(&mut gen, &load_image_dir(dir)?, bits).map_err(|e| match e {
        Error::NoData(_) => Error::NoData(dir.to_path_buf()),
        other => other,
    })
}

pub fn evaluate_images(gen: &mut Generator<f32>, images: &[(String, RawImage)], bits: BitsDropped) -> Result<EvalReport> {
    let rows = images
        .iter()
        .map(|(name, img)| EvalRow::score(name, img, gen, bits))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_rows(bits, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::GeneratorConfig;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn img(w: u32, h: u32, seed: u32) -> RawImage {
        RawImage::from_fn(w, h, |x, y| {
            let v = x.wrapping_mul(2654435761).wrapping_add(y.wrapping_mul(40503)).wrapping_add(seed.wrapping_mul(97));
            [(v >> 3) as u8, (v >> 11) as u8, (v >> 19) as u8]
        })
    }

    fn shifted(a: &RawImage, d: i16) -> RawImage {
        RawImage::from_fn(a.width(), a.height(), |x, y| a.get(x, y).map(|c| (c as i16 + d).clamp(0, 255) as u8))
    }

    #[test]
    fn psnr_closed_forms() {
        let a = RawImage::filled(5, 4, [100, 50, 200]);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert_relative_eq!(psnr(&a, &shifted(&a, 16)).unwrap(), 24.0484, epsilon = 1e-4);
        assert_relative_eq!(psnr(&a, &shifted(&a, 1)).unwrap(), 48.1308, epsilon = 1e-4);
        assert_relative_eq!(psnr(&a, &shifted(&a, -1)).unwrap(), 20.0 * 255f64.log10(), epsilon = 1e-12);
    }

    #[test]
    fn mismatched_dims_are_shape_errors() {
        let a = img(4, 4, 0);
        let b = img(4, 5, 0);
        assert!(matches!(psnr(&a, &b), Err(Error::Shape { .. })));
        assert!(matches!(mae(&a, &b), Err(Error::Shape { .. })));
        assert!(matches!(max_abs_err(&a, &b), Err(Error::Shape { .. })));
    }

    #[test]
    fn mae_and_max() {
        let a = RawImage::new(2, 1, vec![[0, 0, 0], [10, 20, 30]]).unwrap();
        let b = RawImage::new(2, 1, vec![[3, 0, 0], [10, 26, 0]]).unwrap();
        assert_relative_eq!(mae(&a, &b).unwrap(), 39.0 / 6.0);
        assert_eq!(max_abs_err(&a, &b).unwrap(), 30);
    }

    fn small_gen() -> Generator<f32> {
        Generator::new(GeneratorConfig { levels_per_stack: 2, base_channels: 4, input_size: 16, ..Default::default() })
            .unwrap()
    }

    #[test]
    fn lossless_bits_give_infinite_naive_psnr() {
        let images = vec![("a".to_string(), img(16, 16, 1)), ("b".to_string(), img(20, 9, 2))];
        let r = evaluate_images(&mut small_gen(), &images, BitsDropped::new(0).unwrap()).unwrap();
        assert!(r.rows.iter().all(|row| row.psnr_naive.is_infinite() && row.mae_naive == 0.0));
        assert!(r.to_csv().contains(",inf,"));
    }

    #[test]
    fn report_rows_sorted_and_aggregated() {
        let images = vec![("z".to_string(), img(16, 16, 1)), ("a".to_string(), img(18, 17, 2)), ("m".to_string(), img(9, 30, 3))];
        let bits = BitsDropped::new(4).unwrap();
        let r = evaluate_images(&mut small_gen(), &images, bits).unwrap();
        let names: Vec<_> = r.rows.iter().map(|row| row.name.as_str()).collect();
        assert_eq!(names, ["a", "m", "z"]);
        let mean = r.rows.iter().map(|row| row.mae_model).sum::<f64>() / 3.0;
        assert_relative_eq!(r.aggregate.mae_model, mean, epsilon = 1e-12);
        assert!(r.rows.iter().all(|row| row.max_abs_err_naive <= 8.0));

        let mut reversed = images.clone();
        reversed.reverse();
        assert_eq!(evaluate_images(&mut small_gen(), &reversed, bits).unwrap(), r);

        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with("name,width,height,psnr_model,"));
        assert!(r.to_table().contains("nominal factor 2.000"));
    }

    #[test]
    fn empty_set_is_no_data() {
        assert!(matches!(
            evaluate_images(&mut small_gen(), &[], BitsDropped::new(5).unwrap()),
            Err(Error::NoData(_))
        ));
    }

    proptest! {
        #[test]
        fn psnr_symmetric_and_naive_bound(w in 1u32..12, h in 1u32..12, s1 in 0u32..1000, s2 in 0u32..1000, b in 0u32..8) {
            let (a, c) = (img(w, h, s1), img(w, h, s2));
            prop_assert_eq!(psnr(&a, &c).unwrap().to_bits(), psnr(&c, &a).unwrap().to_bits());
            let bits = BitsDropped::new(b).unwrap();
            let naive = decompress_naive(&compress_image(&a, bits));
            let bound = if b == 0 { 0.0 } else { (1u32 << (b - 1)) as f64 };
            prop_assert!(mae(&naive, &a).unwrap() <= bound);
            prop_assert!(max_abs_err(&naive, &a).unwrap() as f64 <= bound);
        }
    }
}
