//! Big-endian IDX image/label files (the MNIST distribution format).
//! Only uncompressed files are accepted.

use std::path::Path;

use super::dataset::{LabeledDataset, Sample};
use crate::error::{FedFgError, IdxError, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32, IdxError> {
    let end = offset + 4;
    let word = bytes.get(offset..end).ok_or(IdxError::Truncated {
        needed: end,
        available: bytes.len(),
    })?;
    Ok(u32::from_be_bytes(word.try_into().expect("4-byte slice")))
}

fn expect_magic(bytes: &[u8], expected: u32) -> Result<(), IdxError> {
    let found = read_u32(bytes, 0)?;
    if found != expected {
        return Err(IdxError::BadMagic { expected, found });
    }
    Ok(())
}

/// Decoded image file: `count` images of `rows * cols` pixels scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<Vec<f64>>,
}

pub fn parse_images(bytes: &[u8]) -> Result<IdxImages, IdxError> {
    expect_magic(bytes, IMAGES_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let size = rows * cols;
    let needed = 16 + count * size;
    if bytes.len() < needed {
        return Err(IdxError::Truncated {
            needed,
            available: bytes.len(),
        });
    }
    let pixels = bytes[16..needed]
        .chunks(size.max(1))
        .take(count)
        .map(|img| img.iter().map(|&p| f64::from(p) / 255.0).collect())
        .collect();
    Ok(IdxImages { rows, cols, pixels })
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>, IdxError> {
    expect_magic(bytes, LABELS_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let needed = 8 + count;
    if bytes.len() < needed {
        return Err(IdxError::Truncated {
            needed,
            available: bytes.len(),
        });
    }
    Ok(bytes[8..needed].to_vec())
}

/// Combines decoded images and labels; the class count is `max label + 1` (at least 2).
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<LabeledDataset> {
    let images = parse_images(images)?;
    let labels = parse_labels(labels)?;
    if images.pixels.len() != labels.len() {
        return Err(IdxError::CountMismatch {
            images: images.pixels.len(),
            labels: labels.len(),
        }
        .into());
    }
    let classes = labels.iter().copied().max().map_or(2, |m| (m as usize + 1).max(2));
    let samples = images
        .pixels
        .into_iter()
        .zip(labels)
        .map(|(x, y)| Sample { x, y: y as usize })
        .collect();
    LabeledDataset::new(samples, classes)
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let images = std::fs::read(images_path).map_err(|e| FedFgError::io(images_path, e))?;
    let labels = std::fs::read(labels_path).map_err(|e| FedFgError::io(labels_path, e))?;
    parse_idx(&images, &labels)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        for w in [IMAGES_MAGIC, count, rows, cols] {
            out.extend_from_slice(&w.to_be_bytes());
        }
        out.extend_from_slice(pixels);
        out
    }

    pub fn labels(magic: u32, values: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&magic.to_be_bytes());
        out.extend_from_slice(&(values.len() as u32).to_be_bytes());
        out.extend_from_slice(values);
        out
    }
}
