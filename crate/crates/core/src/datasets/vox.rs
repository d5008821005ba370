//! VOX1 volume files and JSON dataset manifests.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Volume;
use crate::error::{Error, Result};

pub const VOX_MAGIC: &[u8; 4] = b"VOX1";

/// `"VOX1"`, `u32` D, H, W little-endian, then `f32` values in `[z][y][x]`
/// order.
pub fn encode_vox(v: &Volume) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * v.data().len());
    out.extend_from_slice(VOX_MAGIC);
    for e in v.extents() {
        out.extend_from_slice(&(e as u32).to_le_bytes());
    }
    for x in v.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_vox(bytes: &[u8]) -> Result<Volume> {
    if bytes.len() < 16 {
        return Err(Error::TruncatedFile("VOX1 header".into()));
    }
    if &bytes[..4] != VOX_MAGIC {
        let found = u32::from_be_bytes(bytes[..4].try_into().unwrap());
        return Err(Error::BadMagic {
            found,
            expected: u32::from_be_bytes(*VOX_MAGIC),
        });
    }
    let dim =
        |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let extents = [dim(0), dim(1), dim(2)];
    let n: usize = extents.iter().product();
    let body = &bytes[16..];
    if body.len() != 4 * n {
        return Err(Error::TruncatedFile(format!(
            "VOX1 payload of {} bytes for extents {extents:?}",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Volume::new(extents, data)
}

pub fn write_vox(path: impl AsRef<Path>, v: &Volume) -> Result<()> {
    std::fs::write(path, encode_vox(v))?;
    Ok(())
}

pub fn read_vox(path: impl AsRef<Path>) -> Result<Volume> {
    decode_vox(&std::fs::read(path)?)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

/// Index of a dataset directory; entry paths are relative to it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub dataset: String,
    pub extents: [usize; 3],
    #[serde(default)]
    pub classes: usize,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub const FILE: &'static str = "manifest.json";

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        std::fs::write(
            dir.as_ref().join(Self::FILE),
            serde_json::to_string_pretty(self)?,
        )?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let m: Self =
            serde_json::from_str(&std::fs::read_to_string(dir.as_ref().join(Self::FILE))?)?;
        if let Some(e) = m
            .entries
            .iter()
            .find(|e| e.label.is_some_and(|l| m.classes > 0 && l >= m.classes))
        {
            return Err(Error::Format(format!(
                "label {:?} of {} exceeds {} classes",
                e.label, e.file, m.classes
            )));
        }
        Ok(m)
    }

    /// Writes each volume as VOX1 next to a manifest listing them.
    pub fn write_dataset(
        dir: impl AsRef<Path>,
        dataset: &str,
        classes: usize,
        seed: u64,
        items: &[(Volume, Option<usize>)],
    ) -> Result<Self> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let extents = items.first().map(|(v, _)| v.extents()).unwrap_or([0; 3]);
        let mut entries = Vec::with_capacity(items.len());
        for (i, (v, label)) in items.iter().enumerate() {
            if v.extents() != extents {
                return Err(Error::Format(format!(
                    "item {i} has extents {:?}, expected {extents:?}",
                    v.extents()
                )));
            }
            let file = format!("{i:06}.vox");
            write_vox(dir.join(&file), v)?;
            entries.push(ManifestEntry {
                file,
                label: *label,
            });
        }
        let m = Self {
            dataset: dataset.into(),
            extents,
            classes,
            seed,
            entries,
        };
        m.save(dir)?;
        Ok(m)
    }

    pub fn paths(&self, dir: impl AsRef<Path>) -> Vec<PathBuf> {
        self.entries
            .iter()
            .map(|e| dir.as_ref().join(&e.file))
            .collect()
    }

    /// Loads every listed volume with its label.
    pub fn read_dataset(dir: impl AsRef<Path>) -> Result<(Self, Vec<(Volume, Option<usize>)>)> {
        let m = Self::load(&dir)?;
        let mut items = Vec::with_capacity(m.entries.len());
        for (e, path) in m.entries.iter().zip(m.paths(&dir)) {
            let v = read_vox(path)?;
            if v.extents() != m.extents {
                return Err(Error::Format(format!(
                    "{} has extents {:?}, manifest says {:?}",
                    e.file,
                    v.extents(),
                    m.extents
                )));
            }
            items.push((v, e.label));
        }
        Ok((m, items))
    }
}
