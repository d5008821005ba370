//! VGT1 tensor snapshots: `"VGT1"`, u32 rank, u32 extents, u8 dtype code,
//! then the raw little-endian row-major payload.

use std::io::{Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};

pub const MAGIC: &[u8; 4] = b"VGT1";

impl<T: Scalar> Tensor<T> {
    pub fn to_vgt1_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(9 + 4 * self.rank() + self.numel() * T::DTYPE.size_of());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.rank() as u32).to_le_bytes());
        for &e in self.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        out.push(T::DTYPE.code());
        for &v in self.data() {
            v.write_le(&mut out);
        }
        out
    }

    /// Decodes a snapshot; an f32 file read as f64 (or the reverse) is
    /// converted element by element.
    pub fn from_vgt1_bytes(bytes: &[u8]) -> Result<Self> {
        let truncated = || Error::TruncatedFile("VGT1 tensor".into());
        if bytes.len() < 8 {
            return Err(truncated());
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::BadMagic {
                found: u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]),
                expected: u32::from_be_bytes(*MAGIC),
            });
        }
        let rank = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let mut pos = 8;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let b = bytes.get(pos..pos + 4).ok_or_else(truncated)?;
            shape.push(u32::from_le_bytes(b.try_into().unwrap()) as usize);
            pos += 4;
        }
        let code = *bytes.get(pos).ok_or_else(truncated)?;
        pos += 1;
        let dtype = DType::from_code(code)
            .ok_or_else(|| Error::Format(format!("unknown dtype code {code}")))?;
        let n: usize = shape.iter().product();
        let payload = bytes
            .get(pos..pos + n * dtype.size_of())
            .ok_or_else(truncated)?;
        if bytes.len() != pos + n * dtype.size_of() {
            return Err(Error::Format("trailing bytes after VGT1 payload".into()));
        }
        let data = match dtype {
            DType::F32 => payload
                .chunks_exact(4)
                .map(|c| T::c(f32::read_le(c) as f64))
                .collect(),
            DType::F64 => payload
                .chunks_exact(8)
                .map(|c| T::c(f64::read_le(c)))
                .collect(),
        };
        Tensor::new(shape, data)
    }

    pub fn write_vgt1(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&self.to_vgt1_bytes())?;
        Ok(())
    }

    pub fn read_vgt1(mut r: impl Read) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Self::from_vgt1_bytes(&buf)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_vgt1_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_vgt1_bytes(&std::fs::read(path)?)
    }
}
