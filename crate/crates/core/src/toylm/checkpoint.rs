//! TLM1 checkpoints.
//!
//! Layout (little-endian): `TLM1`, u32 json_len, JSON [`CheckpointMeta`],
//! u32 n_tensors, then per tensor u32 name_len, name bytes, u32 ndim,
//! ndim x u32 dims, f32 values. Adam moments are stored as
//! `adam.m.<name>` and `adam.v.<name>`.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamConfig, LmConfig, LmError, Real, Result, ToyLm};
use crate::binio::{put_f32, put_u32, ByteCursor, Truncated};

const MAGIC: &[u8; 4] = b"TLM1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: LmConfig,
    pub step: u64,
    pub adam: AdamConfig,
}

impl From<Truncated> for LmError {
    fn from(t: Truncated) -> Self {
        LmError::Checkpoint(format!("truncated at byte {} (wanted {})", t.offset, t.wanted))
    }
}

fn put_tensor<T: Real>(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[T]) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put_u32(out, shape.len() as u32);
    for &d in shape {
        put_u32(out, d as u32);
    }
    for v in data {
        put_f32(out, v.to_f32().unwrap());
    }
}

impl<T: Real> ToyLm<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = CheckpointMeta {
            config: self.config.clone(),
            step: self.step,
            adam: self.adam,
        };
        let json = serde_json::to_vec(&meta).expect("config serializes");
        let mut out = Vec::with_capacity(16 + json.len() + 12 * self.params.len());
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, json.len() as u32);
        out.extend_from_slice(&json);
        let tensors = &self.index.tensors;
        put_u32(&mut out, 3 * tensors.len() as u32);
        for (prefix, buf) in [("", &self.params), ("adam.m.", &self.adam_m), ("adam.v.", &self.adam_v)] {
            for t in tensors {
                put_tensor(&mut out, &format!("{prefix}{}", t.name), &t.shape, &buf[t.range()]);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = ByteCursor::new(bytes);
        if cur.take(4)? != MAGIC {
            return Err(LmError::Checkpoint("bad magic".into()));
        }
        let json_len = cur.u32()? as usize;
        let meta: CheckpointMeta = serde_json::from_slice(cur.take(json_len)?)
            .map_err(|e| LmError::Checkpoint(format!("bad config block: {e}")))?;
        let mut model = ToyLm::<T>::new(meta.config)?;
        model.step = meta.step;
        model.adam = meta.adam;
        let mut found: HashMap<String, (Vec<usize>, Vec<T>)> = HashMap::new();
        let n = cur.u32()?;
        for _ in 0..n {
            let name_len = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(name_len)?)
                .map_err(|_| LmError::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let ndim = cur.u32()? as usize;
            if ndim > 8 {
                return Err(LmError::Checkpoint(format!("tensor {name} has {ndim} dims")));
            }
            let shape = (0..ndim).map(|_| cur.u32().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
            let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let count = match count {
                Some(c) if c.saturating_mul(4) <= cur.remaining() => c,
                _ => return Err(LmError::Checkpoint(format!("tensor {name} exceeds file size"))),
            };
            let data = (0..count)
                .map(|_| cur.f32().map(|v| T::from_f32(v).unwrap()))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            found.insert(name, (shape, data));
        }
        if cur.remaining() != 0 {
            return Err(LmError::Checkpoint(format!("{} trailing bytes", cur.remaining())));
        }
        let tensors = model.index.tensors.clone();
        for (prefix, which) in [("", 0), ("adam.m.", 1), ("adam.v.", 2)] {
            for t in &tensors {
                let name = format!("{prefix}{}", t.name);
                let (shape, data) = found
                    .remove(&name)
                    .ok_or_else(|| LmError::Checkpoint(format!("missing tensor {name}")))?;
                if shape != t.shape {
                    return Err(LmError::Checkpoint(format!(
                        "tensor {name} has shape {shape:?}, expected {:?}",
                        t.shape
                    )));
                }
                let buf = match which {
                    0 => &mut model.params,
                    1 => &mut model.adam_m,
                    _ => &mut model.adam_v,
                };
                buf[t.range()].copy_from_slice(&data);
            }
        }
        if let Some(extra) = found.keys().next() {
            return Err(LmError::Checkpoint(format!("unexpected tensor {extra}")));
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

pub fn write_checkpoint<T: Real>(model: &ToyLm<T>, path: impl AsRef<Path>) -> Result<()> {
    model.save(path)
}

pub fn read_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<ToyLm<T>> {
    ToyLm::load(path)
}
