use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::ImageEncoder as _;
use serde::Serialize;

use crate::raster::{is_raster_path, RawImage};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MediaKind {
    Image,
    Frames,
}

/// One original asset and its reconstruction, matched by file or directory stem.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StudyAssetPair {
    pub id: String,
    pub kind: MediaKind,
    /// Frame files in playback order; a single entry for images.
    pub original: Vec<PathBuf>,
    pub reconstructed: Vec<PathBuf>,
}

impl StudyAssetPair {
    pub fn frames(&self) -> usize {
        self.original.len()
    }
}

enum Entry {
    Image(PathBuf),
    Frames(Vec<PathBuf>),
}

fn frame_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut frames: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(Error::file(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_raster_path(p))
        .collect();
    frames.sort();
    Ok(frames)
}

fn entries(dir: &Path) -> Result<BTreeMap<String, Entry>> {
    let mut out = BTreeMap::new();
    for e in std::fs::read_dir(dir).map_err(Error::file(dir))? {
        let path = e.map_err(Error::file(dir))?.path();
        let Some(stem) = path.file_stem().map(|s| s.to_string_lossy().into_owned()) else { continue };
        let entry = if path.is_dir() {
            let frames = frame_files(&path)?;
            if frames.is_empty() {
                continue;
            }
            Entry::Frames(frames)
        } else if is_raster_path(&path) {
            Entry::Image(path)
        } else {
            continue;
        };
        if out.insert(stem.clone(), entry).is_some() {
            return Err(Error::Config(format!("two assets named {stem} in {}", dir.display())));
        }
    }
    Ok(out)
}

fn dims(path: &Path) -> Result<(u32, u32)> {
    let img = RawImage::load(path)?;
    Ok((img.width(), img.height()))
}

/// Pairs assets of `originals` with same-stem assets of `reconstructed`, sorted by id.
/// Unmatched assets are skipped with a warning; a matched pair whose kind, frame
/// count, or dimensions differ is an error.
pub fn discover_pairs(originals: &Path, reconstructed: &Path) -> Result<Vec<StudyAssetPair>> {
    let orig = entries(originals)?;
    let mut recon = entries(reconstructed)?;
    let mut pairs = Vec::new();
    for (id, o) in orig {
        let Some(r) = recon.remove(&id) else {
            log::warn!("no reconstruction for {id}; skipping");
            continue;
        };
        let (kind, original, reconstructed) = match (o, r) {
            (Entry::Image(a), Entry::Image(b)) => (MediaKind::Image, vec![a], vec![b]),
            (Entry::Frames(a), Entry::Frames(b)) => (MediaKind::Frames, a, b),
            _ => return Err(Error::Config(format!("{id}: one side is an image, the other a frame directory"))),
        };
        if original.len() != reconstructed.len() {
            return Err(Error::Config(format!(
                "{id}: {} original frames but {} reconstructed",
                original.len(),
                reconstructed.len()
            )));
        }
        for (a, b) in original.iter().zip(&reconstructed) {
            let (da, db) = (dims(a)?, dims(b)?);
            if da != db {
                return Err(Error::Config(format!("{id}: {} is {da:?} but {} is {db:?}", a.display(), b.display())));
            }
        }
        pairs.push(StudyAssetPair { id, kind, original, reconstructed });
    }
    for id in recon.keys() {
        log::warn!("no original for reconstruction {id}; skipping");
    }
    Ok(pairs)
}

/// Re-encodes a raster as PNG so both conditions reach the client in one format.
pub fn encode_png(img: &RawImage) -> Result<Vec<u8>> {
    let flat: Vec<u8> = img.pixels().iter().flatten().copied().collect();
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(&flat, img.width(), img.height(), image::ExtendedColorType::Rgb8)
        .map_err(|e| Error::Raster(e.to_string()))?;
    Ok(out)
}
