//! Bit-depth-reduction codec.
//!
//! Each 8-bit channel loses its `b` least-significant bits. The remaining
//! `8 - b` bit codes are packed MSB-first, R,G,B per pixel, pixels in
//! row-major order, and the final byte is zero-padded. The naive decoder maps
//! every code back to the midpoint of its value bin.

mod container;
mod packing;

pub use container::{decode_file, encode_file, HEADER_LEN, MAGIC, VERSION};
pub use packing::{BitReader, BitWriter};

use num_rational::Ratio;

use crate::raster::RawImage;
use crate::{Error, Result};

/// Number of least-significant bits dropped from every channel, in `0..=7`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BitsDropped(u8);

impl BitsDropped {
    pub const MAX: u8 = 7;

    pub fn new(b: u32) -> Result<Self> {
        if b > Self::MAX as u32 {
            return Err(Error::InvalidParameter(format!(
                "bits dropped must be in 0..=7, got {b}"
            )));
        }
        Ok(Self(b as u8))
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// Bits kept per channel code.
    pub fn code_bits(self) -> u32 {
        8 - self.0 as u32
    }

    /// Largest representable code, `2^(8-b) - 1`.
    pub fn max_code(self) -> u8 {
        (0xFFu16 >> self.0) as u8
    }

    pub fn compression_factor(self) -> Ratio<u32> {
        Ratio::new(8, 8 - self.0 as u32)
    }

    /// Worst-case absolute error of midpoint reconstruction, `2^(b-1)` (0 at b = 0).
    pub fn midpoint_error_bound(self) -> u8 {
        if self.0 == 0 {
            0
        } else {
            1 << (self.0 - 1)
        }
    }
}

impl std::fmt::Display for BitsDropped {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Ratio of raw to compressed size when `b` bits are dropped per channel: `8 / (8 - b)`.
pub fn compression_factor(b: u32) -> Result<Ratio<u32>> {
    Ok(BitsDropped::new(b)?.compression_factor())
}

#[inline]
pub fn quantize_channel(v: u8, b: BitsDropped) -> u8 {
    v >> b.0
}

/// Maps a code to the centre of its bin: `q·2^b + 2^(b-1)`, or `q` when `b = 0`.
#[inline]
pub fn dequantize_midpoint(q: u8, b: BitsDropped) -> u8 {
    debug_assert!(q <= b.max_code());
    if b.0 == 0 {
        q
    } else {
        (q << b.0) | (1 << (b.0 - 1))
    }
}

/// Payload size in bytes for a `width × height` image: `ceil(3·(8-b)·W·H / 8)`.
pub fn payload_len(width: u32, height: u32, b: BitsDropped) -> usize {
    let bits = 3 * b.code_bits() as u64 * width as u64 * height as u64;
    bits.div_ceil(8) as usize
}

/// A compressed image: dimensions, the global bit depth reduction and the packed codes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedImage {
    width: u32,
    height: u32,
    bits: BitsDropped,
    payload: Vec<u8>,
}

impl PackedImage {
    /// Validates the payload length against the dimensions.
    pub fn from_parts(width: u32, height: u32, bits: BitsDropped, payload: Vec<u8>) -> Result<Self> {
        let expected = payload_len(width, height, bits);
        if payload.len() != expected {
            return Err(Error::CorruptPayload {
                expected,
                found: payload.len(),
            });
        }
        Ok(Self {
            width,
            height,
            bits,
            payload,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> BitsDropped {
        self.bits
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    /// Unpacks every channel code in storage order.
    pub fn codes(&self) -> Vec<u8> {
        let n = self.width as usize * self.height as usize * 3;
        let mut reader = BitReader::new(&self.payload);
        let width = self.bits.code_bits();
        (0..n)
            .map(|_| reader.read(width).expect("payload length validated") as u8)
            .collect()
    }

    pub fn report(&self) -> CompressionReport {
        let raw_bytes = 3 * self.width as u64 * self.height as u64;
        let packed_bytes = self.payload.len() as u64;
        let header_bytes = HEADER_LEN as u64;
        CompressionReport {
            raw_bytes,
            packed_bytes,
            header_bytes,
            achieved_ratio: Ratio::new(raw_bytes, (packed_bytes + header_bytes).max(1)),
            nominal_factor: self.bits.compression_factor(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompressionReport {
    pub raw_bytes: u64,
    /// Payload only.
    pub packed_bytes: u64,
    pub header_bytes: u64,
    /// Raw size over the whole file size, header included.
    pub achieved_ratio: Ratio<u64>,
    pub nominal_factor: Ratio<u32>,
}

pub fn compress_image(img: &RawImage, b: BitsDropped) -> PackedImage {
    let mut writer = BitWriter::with_capacity(payload_len(img.width(), img.height(), b));
    let width = b.code_bits();
    for px in img.pixels() {
        for &c in px {
            writer.write(quantize_channel(c, b) as u32, width);
        }
    }
    PackedImage {
        width: img.width(),
        height: img.height(),
        bits: b,
        payload: writer.finish(),
    }
}

pub fn decompress_naive(p: &PackedImage) -> RawImage {
    let b = p.bits;
    let pixels = p
        .codes()
        .chunks_exact(3)
        .map(|c| {
            [
                dequantize_midpoint(c[0], b),
                dequantize_midpoint(c[1], b),
                dequantize_midpoint(c[2], b),
            ]
        })
        .collect();
    RawImage::new(p.width, p.height, pixels).expect("dimensions preserved")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bits(b: u32) -> BitsDropped {
        BitsDropped::new(b).unwrap()
    }

    #[test]
    fn factor_values() {
        assert_eq!(compression_factor(5).unwrap(), Ratio::new(8, 3));
        assert_eq!(compression_factor(4).unwrap(), Ratio::from_integer(2));
        assert_eq!(compression_factor(0).unwrap(), Ratio::from_integer(1));
        let f = compression_factor(5).unwrap();
        assert_eq!(format!("{:.3}", *f.numer() as f64 / *f.denom() as f64), "2.667");
        assert!(matches!(compression_factor(8), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize_channel(255, bits(5)), 7);
        assert_eq!(quantize_channel(0, bits(4)), 0);
        assert_eq!(quantize_channel(200, bits(5)), 6);
    }

    #[test]
    fn quantize_matches_division_oracle() {
        for b in 0..=7u32 {
            let mut prev = 0;
            for v in 0..=255u32 {
                let q = quantize_channel(v as u8, bits(b)) as u32;
                assert_eq!(q, v / 2u32.pow(b));
                assert!(q >= prev);
                assert!(q < (1 << (8 - b)));
                prev = q;
            }
        }
    }

    #[test]
    fn midpoint_examples() {
        assert_eq!(dequantize_midpoint(7, bits(5)), 240);
        assert_eq!(dequantize_midpoint(0, bits(4)), 8);
        for q in 0..=255u8 {
            assert_eq!(dequantize_midpoint(q, bits(0)), q);
        }
    }

    #[test]
    fn midpoint_error_bound_exhaustive() {
        for b in 0..=7u32 {
            let bd = bits(b);
            let bound = if b == 0 { 0 } else { 1i32 << (b - 1) };
            let worst = (0..=255u8)
                .map(|v| (dequantize_midpoint(quantize_channel(v, bd), bd) as i32 - v as i32).abs())
                .max()
                .unwrap();
            assert_eq!(worst, bound, "b={b}");
            assert_eq!(bd.midpoint_error_bound() as i32, bound);
        }
    }

    #[test]
    fn single_pixel_layout() {
        let img = RawImage::new(1, 1, vec![[255, 0, 200]]).unwrap();
        let p = compress_image(&img, bits(5));
        assert_eq!(p.payload(), &[0xE3, 0x00]);
        assert_eq!(compress_image(&img, bits(4)).payload().len(), 2);
    }

    #[test]
    fn lossless_at_zero_bits() {
        let img = RawImage::new(2, 1, vec![[1, 2, 3], [250, 128, 7]]).unwrap();
        let p = compress_image(&img, bits(0));
        assert_eq!(p.payload(), &[1, 2, 3, 250, 128, 7]);
        assert_eq!(decompress_naive(&p), img);
    }

    #[test]
    fn white_pixel_midpoint() {
        let img = RawImage::new(1, 1, vec![[255, 255, 255]]).unwrap();
        let out = decompress_naive(&compress_image(&img, bits(5)));
        assert_eq!(out.pixels()[0], [240, 240, 240]);
    }

    #[test]
    fn short_payload_is_corrupt() {
        let err = PackedImage::from_parts(2, 2, bits(4), vec![0; 5]).unwrap_err();
        assert!(matches!(err, Error::CorruptPayload { expected: 6, found: 5 }));
    }

    #[test]
    fn report_ratio_approaches_nominal() {
        let small = compress_image(&RawImage::filled(4, 4, [9, 9, 9]), bits(5)).report();
        let big = compress_image(&RawImage::filled(256, 256, [9, 9, 9]), bits(5)).report();
        let nominal = 8.0 / 3.0;
        let as_f = |r: Ratio<u64>| *r.numer() as f64 / *r.denom() as f64;
        assert!((as_f(big.achieved_ratio) - nominal).abs() < (as_f(small.achieved_ratio) - nominal).abs());
        assert_eq!(big.nominal_factor, Ratio::new(8, 3));
        assert_eq!(big.packed_bytes, 256 * 256 * 9 / 8);
    }

    fn arb_image() -> impl Strategy<Value = RawImage> {
        (1u32..12, 1u32..12).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<[u8; 3]>(), (w * h) as usize)
                .prop_map(move |px| RawImage::new(w, h, px).unwrap())
        })
    }

    proptest! {
        #[test]
        fn size_law_and_bound(img in arb_image(), b in 0u32..=7) {
            let bd = bits(b);
            let p = compress_image(&img, bd);
            let payload_bits = 3 * (8 - b as usize) * img.width() as usize * img.height() as usize;
            prop_assert_eq!(p.payload().len(), payload_bits.div_ceil(8));
            let out = decompress_naive(&p);
            prop_assert_eq!(out.width(), img.width());
            for (a, o) in img.pixels().iter().zip(out.pixels()) {
                for c in 0..3 {
                    prop_assert!((a[c] as i32 - o[c] as i32).abs() <= bd.midpoint_error_bound() as i32);
                }
            }
        }

        #[test]
        fn requantization_is_idempotent(img in arb_image(), b in 0u32..=7) {
            let bd = bits(b);
            let p = compress_image(&img, bd);
            prop_assert_eq!(compress_image(&decompress_naive(&p), bd), p);
        }
    }
}
