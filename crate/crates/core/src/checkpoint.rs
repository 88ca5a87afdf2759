//! Self-describing binary container for trained state.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes   "FMRGCKPT"
//! version    u32
//! count      u32       number of arrays
//! count × {
//!     name_len  u32, name  UTF-8 bytes
//!     ndim      u32, dims  ndim × u64
//!     data      product(dims) × f64
//! }
//! ```
//!
//! Integers that do not fit an f64 exactly (RNG words, counters) are stored
//! as the f64 with the same bit pattern. Text (the resolved run
//! configuration) is stored one byte per element.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::NamedArray;

pub const MAGIC: &[u8; 8] = b"FMRGCKPT";
pub const VERSION: u32 = 1;
pub const CONFIG_ARRAY: &str = "config";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub arrays: Vec<NamedArray>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.at < n {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

impl Checkpoint {
    pub fn new(arrays: Vec<NamedArray>) -> Self {
        Self { arrays }
    }

    pub fn get(&self, name: &str) -> Result<&NamedArray> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing array `{name}`")))
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        let a = self.get(name)?;
        a.data
            .first()
            .copied()
            .ok_or_else(|| Error::Checkpoint(format!("array `{name}` is empty")))
    }

    pub fn set_text(&mut self, name: &str, text: &str) {
        self.arrays.retain(|a| a.name != name);
        let data: Vec<f64> = text.bytes().map(f64::from).collect();
        self.arrays.push(NamedArray::new(name, vec![data.len()], data));
    }

    pub fn text(&self, name: &str) -> Result<String> {
        let bytes: Vec<u8> = self.get(name)?.data.iter().map(|&v| v as u8).collect();
        String::from_utf8(bytes).map_err(|e| Error::Checkpoint(format!("array `{name}` is not UTF-8: {e}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for a in &self.arrays {
            out.extend_from_slice(&(a.name.len() as u32).to_le_bytes());
            out.extend_from_slice(a.name.as_bytes());
            out.extend_from_slice(&(a.shape.len() as u32).to_le_bytes());
            for &d in &a.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &a.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (this build reads {VERSION})"
            )));
        }
        let count = r.u32()? as usize;
        let mut arrays = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|e| Error::Checkpoint(format!("array name is not UTF-8: {e}")))?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Checkpoint(format!("array `{name}` is too large")))?;
            let raw = r.take(numel.checked_mul(8).ok_or_else(|| Error::Checkpoint("array too large".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            arrays.push(NamedArray { name, shape, data });
        }
        if r.at != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after last array".into()));
        }
        Ok(Self { arrays })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
