//! IDX files: big-endian header of magic and extents followed by `u8`
//! payload.

use std::path::Path;

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn len(&self) -> usize {
        self.pixels.len() / (self.rows * self.cols).max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }
}

fn header(bytes: &[u8], expected: u32, dims: usize, what: &str) -> Result<Vec<usize>> {
    let word = |i: usize| -> Result<u32> {
        bytes
            .get(4 * i..4 * i + 4)
            .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
            .ok_or_else(|| Error::TruncatedFile(format!("{what} header")))
    };
    let magic = word(0)?;
    if magic != expected {
        return Err(Error::BadMagic {
            found: magic,
            expected,
        });
    }
    (1..=dims).map(|i| word(i).map(|w| w as usize)).collect()
}

fn payload<'a>(bytes: &'a [u8], offset: usize, len: usize, what: &str) -> Result<&'a [u8]> {
    bytes.get(offset..offset + len).ok_or_else(|| {
        Error::TruncatedFile(format!(
            "{what}: need {len} payload bytes, have {}",
            bytes.len().saturating_sub(offset)
        ))
    })
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let d = header(bytes, IMAGES_MAGIC, 3, "IDX images")?;
    let pixels = payload(bytes, 16, d[0] * d[1] * d[2], "IDX images")?.to_vec();
    Ok(IdxImages {
        rows: d[1],
        cols: d[2],
        pixels,
    })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let d = header(bytes, LABELS_MAGIC, 1, "IDX labels")?;
    Ok(payload(bytes, 8, d[0], "IDX labels")?.to_vec())
}

pub fn encode_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for w in [
        IMAGES_MAGIC,
        images.len() as u32,
        images.rows as u32,
        images.cols as u32,
    ] {
        out.extend_from_slice(&w.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

pub fn read_idx_images(path: impl AsRef<Path>) -> Result<IdxImages> {
    parse_idx_images(&std::fs::read(path)?)
}

pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    parse_idx_labels(&std::fs::read(path)?)
}

pub fn write_idx_images(path: impl AsRef<Path>, images: &IdxImages) -> Result<()> {
    std::fs::write(path, encode_idx_images(images))?;
    Ok(())
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    std::fs::write(path, encode_idx_labels(labels))?;
    Ok(())
}
