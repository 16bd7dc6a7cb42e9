//! 8-bit RGB rasters and their on-disk formats.
//!
//! Binary PPM (`P6`, maxval 255) is the native format. PNG is accepted and
//! written through the `image` crate; everything is converted to [`RawImage`]
//! at the boundary.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::{Error, Result};

pub type Rgb = [u8; 3];

/// Row-major RGB raster with 8 bits per channel.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RawImage {
    width: u32,
    height: u32,
    pixels: Vec<Rgb>,
}

impl RawImage {
    pub fn new(width: u32, height: u32, pixels: Vec<Rgb>) -> Result<Self> {
        let expected = width as usize * height as usize;
        if pixels.len() != expected {
            return Err(Error::Raster(format!(
                "{width}x{height} image needs {expected} pixels, got {}",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, px: Rgb) -> Self {
        Self {
            width,
            height,
            pixels: vec![px; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> Rgb) -> Self {
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> Rgb {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    /// Copies the `w × h` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: u32, y0: u32, w: u32, h: u32) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::InvalidParameter(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        Ok(Self::from_fn(w, h, |x, y| self.get(x0 + x, y0 + y)))
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.reserve(self.pixels.len() * 3);
        for px in &self.pixels {
            out.extend_from_slice(px);
        }
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self> {
        read_ppm(BufReader::new(bytes))
    }

    /// Loads a PPM or PNG file, sniffing the format from its first bytes.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(Error::file(path))?;
        if bytes.starts_with(b"P6") || bytes.starts_with(b"P3") {
            return Self::from_ppm(&bytes);
        }
        let decoded = image::load_from_memory(&bytes)
            .map_err(|e| Error::Raster(format!("{}: {e}", path.display())))?
            .to_rgb8();
        let (w, h) = decoded.dimensions();
        let pixels = decoded.pixels().map(|p| p.0).collect();
        Self::new(w, h, pixels)
    }

    /// Writes PNG when the extension says so, binary PPM otherwise.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let is_png = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png {
            let flat: Vec<u8> = self.pixels.iter().flatten().copied().collect();
            let buf = image::RgbImage::from_raw(self.width, self.height, flat)
                .expect("buffer sized from dimensions");
            buf.save(path)
                .map_err(|e| Error::Raster(format!("{}: {e}", path.display())))
        } else {
            let mut f = std::fs::File::create(path).map_err(Error::file(path))?;
            f.write_all(&self.to_ppm()).map_err(Error::file(path))
        }
    }
}

/// Whether `path` looks like a raster this module can read.
pub fn is_raster_path(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "ppm" | "pnm" | "png"))
}

fn read_ppm<R: BufRead>(mut r: R) -> Result<RawImage> {
    let mut magic = [0u8; 2];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Raster("truncated PPM header".into()))?;
    let ascii = match &magic {
        b"P6" => false,
        b"P3" => true,
        _ => return Err(Error::Raster(format!("not a PPM file (magic {magic:?})"))),
    };
    let width = read_header_number(&mut r)?;
    let height = read_header_number(&mut r)?;
    let maxval = read_header_number(&mut r)?;
    if maxval != 255 {
        return Err(Error::Raster(format!("only maxval 255 is supported, got {maxval}")));
    }
    let n = width as usize * height as usize;
    let mut data = Vec::with_capacity(n * 3);
    if ascii {
        for _ in 0..n * 3 {
            let v = read_header_number(&mut r)?;
            if v > 255 {
                return Err(Error::Raster(format!("sample {v} exceeds maxval")));
            }
            data.push(v as u8);
        }
    } else {
        data.resize(n * 3, 0);
        r.read_exact(&mut data)
            .map_err(|_| Error::Raster("truncated PPM raster".into()))?;
    }
    let pixels = data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    RawImage::new(width, height, pixels)
}

/// Reads one whitespace-delimited decimal, skipping `#` comments. Consumes exactly
/// one trailing whitespace byte, as the raster data starts right after it.
fn read_header_number<R: BufRead>(r: &mut R) -> Result<u32> {
    let mut byte = [0u8; 1];
    let mut next = |r: &mut R| -> Result<u8> {
        r.read_exact(&mut byte)
            .map_err(|_| Error::Raster("truncated PPM header".into()))?;
        Ok(byte[0])
    };
    let mut c = next(r)?;
    loop {
        if c == b'#' {
            while c != b'\n' {
                c = next(r)?;
            }
        } else if c.is_ascii_whitespace() {
            c = next(r)?;
        } else {
            break;
        }
    }
    let mut value: u32 = 0;
    if !c.is_ascii_digit() {
        return Err(Error::Raster(format!("unexpected byte {c:#04x} in PPM header")));
    }
    while c.is_ascii_digit() {
        value = value
            .checked_mul(10)
            .and_then(|v| v.checked_add((c - b'0') as u32))
            .ok_or_else(|| Error::Raster("PPM header number overflow".into()))?;
        match r.fill_buf()?.first() {
            Some(&d) => {
                r.consume(1);
                c = d;
            }
            None => break,
        }
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_roundtrip() {
        let img = RawImage::from_fn(5, 3, |x, y| [x as u8 * 40, y as u8 * 70, 255]);
        assert_eq!(RawImage::from_ppm(&img.to_ppm()).unwrap(), img);
    }

    #[test]
    fn ppm_with_comments_and_ascii() {
        let bin = b"P6\n# made by hand\n2 1\n255\n\x01\x02\x03\x0a\x0b\x0c";
        let img = RawImage::from_ppm(bin).unwrap();
        assert_eq!(img.pixels(), &[[1, 2, 3], [10, 11, 12]]);
        let ascii = b"P3 2 1 255\n1 2 3\n10 11 12\n";
        assert_eq!(RawImage::from_ppm(ascii).unwrap(), img);
    }

    #[test]
    fn ppm_rejections() {
        assert!(RawImage::from_ppm(b"P5\n1 1\n255\n\0").is_err());
        assert!(RawImage::from_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0").is_err());
        assert!(RawImage::from_ppm(b"P6\n2 2\n255\n\0\0\0").is_err());
    }

    #[test]
    fn pixel_count_checked() {
        assert!(RawImage::new(2, 2, vec![[0; 3]; 3]).is_err());
    }

    #[test]
    fn png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let img = RawImage::from_fn(4, 4, |x, y| [x as u8, y as u8, 9]);
        let path = dir.path().join("a.png");
        img.save(&path).unwrap();
        assert_eq!(RawImage::load(&path).unwrap(), img);
        let path = dir.path().join("a.ppm");
        img.save(&path).unwrap();
        assert_eq!(RawImage::load(&path).unwrap(), img);
    }
}
