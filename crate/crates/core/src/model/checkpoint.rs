//! Binary checkpoint container.
//!
//! Little-endian throughout:
//!
//! ```text
//! magic      8 bytes   "CYCFLOWC"
//! version    u32       CHECKPOINT_VERSION
//! header_len u32       length of the JSON header that follows
//! header     bytes     {"config": ModelConfig, "meta": TrainingMeta}
//! count      u32       number of tensors
//! per tensor:
//!   name_len u32, name (UTF-8)
//!   rows u32, cols u32
//!   rows*cols f64 values, row-major
//! ```
//!
//! Tensors are written in [`Layout::named`] order; loading checks every
//! name and shape against the layout the header's config implies.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Layout, ModelConfig, ModelParams};
use crate::error::{CycflowError, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"CYCFLOWC";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainingMeta {
    /// `flow` for the velocity field, `direct` for the angle-regression baseline.
    pub kind: String,
    pub epochs: usize,
    pub steps: usize,
    pub final_loss: f64,
    pub initial_loss: f64,
    pub dataset_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub meta: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    meta: TrainingMeta,
}

fn bad(msg: impl Into<String>) -> CycflowError {
    CycflowError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.params.data.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let header = serde_json::to_vec(&Header {
            config: self.params.config,
            meta: self.meta.clone(),
        })
        .expect("header serializes");
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        let named = self.params.layout.named();
        out.extend_from_slice(&(named.len() as u32).to_le_bytes());
        for (name, t) in named {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rows as u32).to_le_bytes());
            out.extend_from_slice(&(t.cols as u32).to_le_bytes());
            for v in self.params.get(t) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(bad("not a cycflow checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let hlen = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(hlen)?)
            .map_err(|e| bad(format!("invalid header: {e}")))?;
        let mut params = ModelParams::zeros(header.config)?;
        let expected = Layout::new(&header.config).named();
        let count = r.u32()? as usize;
        if count != expected.len() {
            return Err(bad(format!(
                "expected {} tensors, found {count}",
                expected.len()
            )));
        }
        for (name, t) in expected {
            let nlen = r.u32()? as usize;
            let got = std::str::from_utf8(r.take(nlen)?).map_err(|_| bad("tensor name is not UTF-8"))?;
            if got != name {
                return Err(bad(format!("expected tensor {name:?}, found {got:?}")));
            }
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            if (rows, cols) != (t.rows, t.cols) {
                return Err(bad(format!(
                    "tensor {name}: shape {rows}x{cols}, expected {}x{}",
                    t.rows, t.cols
                )));
            }
            let raw = r.take(t.len() * 8)?;
            for (dst, chunk) in params.data[t.range()].iter_mut().zip(raw.chunks_exact(8)) {
                *dst = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            }
        }
        if r.pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        if !params.is_finite() {
            return Err(bad("checkpoint contains non-finite weights"));
        }
        Ok(Self {
            params,
            meta: header.meta,
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| bad("unexpected end of checkpoint"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&ckpt.to_bytes())?;
    f.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    Checkpoint::from_bytes(&bytes)
}
