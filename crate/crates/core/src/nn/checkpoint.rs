//! Binary parameter container.
//!
//! Layout (little-endian): magic `LCNN`, `u32` format version, then one
//! record per tensor until end of file: `u32` name length, UTF-8 name,
//! `u32` rank, `rank x u32` dims, `f32` payload.

use std::path::Path;

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"LCNN";
pub const FORMAT_VERSION: u32 = 1;

pub type NamedTensor = (String, Tensor<f32>);

pub fn encode(tensors: &[NamedTensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Vec<NamedTensor>, String> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4) != Some(MAGIC.as_slice()) {
        return Err("missing LCNN magic".into());
    }
    match c.u32() {
        Some(FORMAT_VERSION) => {}
        Some(v) => return Err(format!("unsupported format version {v}")),
        None => return Err("truncated header".into()),
    }
    let mut out = Vec::new();
    while c.pos < bytes.len() {
        let truncated = || format!("truncated record {}", out.len());
        let name_len = c.u32().ok_or_else(truncated)? as usize;
        let name = std::str::from_utf8(c.take(name_len).ok_or_else(truncated)?)
            .map_err(|e| format!("record {}: name is not UTF-8: {e}", out.len()))?
            .to_string();
        let rank = c.u32().ok_or_else(truncated)? as usize;
        let dims = (0..rank)
            .map(|_| c.u32().map(|d| d as usize))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(truncated)?;
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| format!("record {name}: dims overflow"))?;
        let payload = c
            .take(n.checked_mul(4).ok_or_else(truncated)?)
            .ok_or_else(truncated)?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let t = Tensor::new(dims, data).map_err(|e| e.to_string())?;
        out.push((name, t));
    }
    Ok(out)
}

pub fn write(path: impl AsRef<Path>, tensors: &[NamedTensor]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(tensors)).map_err(|e| Error::io(path, e))
}

pub fn read(path: impl AsRef<Path>) -> Result<Vec<NamedTensor>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|reason| Error::Malformed {
        kind: "checkpoint",
        path: path.to_path_buf(),
        reason,
    })
}
