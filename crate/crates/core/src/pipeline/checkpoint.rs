//! `.ockpt` files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"OCKPT\0"  u32 version
//! u64 header length, header JSON (config, basis, domains, metadata,
//!     parameter names and shapes)
//! per parameter, in name order:
//!     u64 section length, u32 name length, name bytes,
//!     u32 rank, rank × u64 dims, f64 values
//! ```
//!
//! Nothing time-dependent is written, so equal models give equal bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::model::{DomainInfo, OneCast, TrainingMetadata};
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};
use crate::seasonal::SeasonalBasis;

pub const MAGIC: &[u8; 6] = b"OCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub basis: SeasonalBasis,
    pub domains: Vec<DomainInfo>,
    pub metadata: TrainingMetadata,
    pub params: Vec<ParamEntry>,
}

impl CheckpointHeader {
    pub fn has_param_prefix(&self, prefix: &str) -> bool {
        self.params.iter().any(|p| p.name.starts_with(prefix))
    }
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| corrupt(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| corrupt("length does not fit in memory"))
    }
}

impl OneCast {
    pub fn header(&self) -> CheckpointHeader {
        CheckpointHeader {
            config: self.config.clone(),
            basis: self.basis.clone(),
            domains: self.domains.clone(),
            metadata: self.metadata.clone(),
            params: self
                .store
                .iter()
                .map(|(n, p)| ParamEntry {
                    name: n.clone(),
                    shape: p.value.shape().to_vec(),
                })
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header()).map_err(|e| corrupt(format!("header encoding failed: {e}")))?;
        let mut out = Vec::with_capacity(header.len() + 8 * self.store.total_elements() + 64);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (name, p) in self.store.iter() {
            let shape = p.value.shape();
            let len = 4 + name.len() + 4 + 8 * shape.len() + 8 * p.value.numel();
            out.extend_from_slice(&(len as u64).to_le_bytes());
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(corrupt("not an .ockpt file"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(corrupt(format!("unsupported version {version}")));
        }
        let header_len = r.len()?;
        let header: CheckpointHeader =
            serde_json::from_slice(r.take(header_len)?).map_err(|e| corrupt(format!("bad header: {e}")))?;
        let mut store = ParamStore::new();
        for entry in &header.params {
            let section_len = r.len()?;
            let start = r.pos;
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?).map_err(|_| corrupt("parameter name is not UTF-8"))?;
            if name != entry.name {
                return Err(corrupt(format!("expected section `{}`, found `{name}`", entry.name)));
            }
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
            if shape != entry.shape {
                return Err(corrupt(format!("shape of `{name}` disagrees with header")));
            }
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| corrupt("shape overflows"))?;
            let raw = r.take(numel.checked_mul(8).ok_or_else(|| corrupt("shape overflows"))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            if r.pos - start != section_len {
                return Err(corrupt(format!("section `{name}` has the wrong length")));
            }
            store.insert(name, Tensor::new(shape, data)?)?;
        }
        if r.pos != bytes.len() {
            return Err(corrupt("trailing bytes after last section"));
        }
        header.config.validate()?;
        Ok(Self {
            config: header.config,
            basis: header.basis,
            domains: header.domains,
            store,
            metadata: header.metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Header of a checkpoint file without materializing its parameters.
pub fn read_header(path: &Path) -> Result<CheckpointHeader> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { buf: &bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(corrupt("not an .ockpt file"));
    }
    let _version = r.u32()?;
    let n = r.len()?;
    serde_json::from_slice(r.take(n)?).map_err(|e| corrupt(format!("bad header: {e}")))
}
