//! IDX reader and writer for the handwritten-digit distribution files.
//!
//! Images: big-endian magic `0x00000803`, `u32` count, rows, cols, then
//! `count × rows × cols` bytes. Labels: magic `0x00000801`, `u32` count,
//! then `count` bytes.

use std::fs;
use std::path::Path;

use super::LabeledSet;
use crate::error::{Error, Result};
use crate::image::{Image, Label};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Loads an image/label file pair, scaling pixels from `0..=255` to `[0, 1]`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledSet> {
    let image_bytes = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let label_bytes = fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    let images = parse_images(&image_bytes, images_path)?;
    let labels = parse_labels(&label_bytes, labels_path)?;
    if images.len() != labels.len() {
        return Err(Error::IdxCountMismatch {
            images: images.len(),
            labels: labels.len(),
        });
    }
    LabeledSet::new(
        images,
        labels,
        vec![images_path.display().to_string(), labels_path.display().to_string()],
    )
}

pub fn parse_images(bytes: &[u8], path: &Path) -> Result<Vec<Image>> {
    let header = read_header(bytes, path, IDX_IMAGES_MAGIC, 4)?;
    let (count, rows, cols) = (header[1] as usize, header[2] as usize, header[3] as usize);
    if rows == 0 || cols == 0 {
        return Err(Error::format(path, format!("degenerate image size {rows}x{cols}")));
    }
    let pixels = &bytes[16..];
    let expected = count * rows * cols;
    if pixels.len() < expected {
        return Err(Error::IdxTruncated {
            path: path.to_path_buf(),
            expected,
            found: pixels.len(),
        });
    }
    pixels[..expected]
        .chunks_exact(rows * cols)
        .map(|chunk| Image::from_bytes(rows, cols, chunk))
        .collect()
}

pub fn parse_labels(bytes: &[u8], path: &Path) -> Result<Vec<Label>> {
    let header = read_header(bytes, path, IDX_LABELS_MAGIC, 2)?;
    let count = header[1] as usize;
    let payload = &bytes[8..];
    if payload.len() < count {
        return Err(Error::IdxTruncated {
            path: path.to_path_buf(),
            expected: count,
            found: payload.len(),
        });
    }
    payload[..count]
        .iter()
        .map(|&b| Label::new(usize::from(b)))
        .collect()
}

fn read_header(bytes: &[u8], path: &Path, magic: u32, words: usize) -> Result<Vec<u32>> {
    if let Some(found) = bytes.first_chunk::<4>().map(|b| u32::from_be_bytes(*b)) {
        if found != magic {
            return Err(Error::IdxMagic {
                path: path.to_path_buf(),
                expected: magic,
                found,
            });
        }
    }
    if bytes.len() < 4 * words {
        return Err(Error::IdxTruncated {
            path: path.to_path_buf(),
            expected: 4 * words,
            found: bytes.len(),
        });
    }
    let header: Vec<u32> = bytes[..4 * words]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(header)
}

/// Encodes raw 8-bit images (each `rows × cols` bytes) as an IDX image file.
pub fn encode_idx_images(rows: usize, cols: usize, images: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    for word in [IDX_IMAGES_MAGIC, images.len() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    for img in images {
        assert_eq!(img.len(), rows * cols, "image byte count");
        out.extend_from_slice(img);
    }
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
