//! `CSM1` model files.
//!
//! Layout (little-endian): magic `CSM1`, `u32` header length, JSON header,
//! `u32` tensor count, then per tensor: `u32` name length, UTF-8 name,
//! `u32` rank, `rank x u64` dims, row-major `f64` data.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{ModelConfig, ModelParams};
use crate::error::{CsedError, Result};
use crate::features::FeatureConfig;

const MAGIC: &[u8; 4] = b"CSM1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub labels: Vec<String>,
    pub features: FeatureConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        self.params.check_shapes(&self.header.model)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let header = serde_json::to_vec(&self.header)?;
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        let tensors = self.params.named();
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for &d in &t.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for x in &t.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = ByteReader { rest: bytes, path };
        if r.take(4, "magic")? != MAGIC {
            return Err(r.err("missing CSM1 magic".into()));
        }
        let header_len = r.u32("header length")? as usize;
        let header: CheckpointHeader = serde_json::from_slice(r.take(header_len, "header")?)
            .map_err(|e| r.err(format!("header: {e}")))?;
        header.model.validate()?;
        let count = r.u32("tensor count")? as usize;

        let mut params = ModelParams::zeros(&header.model);
        let mut slots = params.named_mut();
        if slots.len() != count {
            return Err(r.err(format!(
                "config implies {} tensors, file has {count}",
                slots.len()
            )));
        }
        for (want_name, slot) in slots.iter_mut() {
            let name_len = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "name")?)
                .map_err(|_| r.err("tensor name is not UTF-8".into()))?
                .to_string();
            if &name != want_name {
                return Err(r.err(format!("expected tensor {want_name}, found {name}")));
            }
            let rank = r.u32("rank")? as usize;
            let dims = (0..rank)
                .map(|_| {
                    r.take(8, "dims")
                        .map(|b| u64::from_le_bytes(b.try_into().unwrap()) as usize)
                })
                .collect::<Result<Vec<_>>>()?;
            if dims != slot.dims {
                return Err(r.err(format!(
                    "tensor {name} has dims {dims:?}, config implies {:?}",
                    slot.dims
                )));
            }
            let raw = r.take(slot.data.len() * 8, "tensor data")?;
            for (x, c) in slot.data.iter_mut().zip(raw.chunks_exact(8)) {
                *x = f64::from_le_bytes(c.try_into().unwrap());
            }
        }
        drop(slots);
        if !r.rest.is_empty() {
            return Err(r.err("trailing bytes after last tensor".into()));
        }
        Ok(Checkpoint { header, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.encode()?;
        let mut f = std::fs::File::create(path).map_err(|e| CsedError::io(path, e))?;
        f.write_all(&bytes).map_err(|e| CsedError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CsedError::io(path, e))?;
        Checkpoint::decode(&bytes, path)
    }
}

struct ByteReader<'a> {
    rest: &'a [u8],
    path: &'a Path,
}

impl<'a> ByteReader<'a> {
    fn err(&self, msg: String) -> CsedError {
        CsedError::Format {
            path: self.path.to_path_buf(),
            msg,
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.rest.len() < n {
            return Err(self.err(format!("truncated while reading {what}")));
        }
        let (head, tail) = self.rest.split_at(n);
        self.rest = tail;
        Ok(head)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}
