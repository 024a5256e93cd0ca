//! Binary checkpoints: magic, `u32` version, JSON header, named `f64`
//! parameter arrays, optional optimizer moments, then a SHA-256 of all
//! preceding bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AdamW, TrainConfig};
use crate::autograd::Tensor;
use crate::diffusion::ScheduleDescriptor;
use crate::error::{DimpError, Result};
use crate::model::ModelState;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DIMPCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub t: Vec<u64>,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub center_schedule: ScheduleDescriptor,
    pub motion_schedule: ScheduleDescriptor,
    /// Optimizer steps completed.
    pub step: usize,
    /// The run seed; with `step` it fixes every later random draw.
    pub seed: u64,
    pub params: Vec<(String, Tensor)>,
    pub optimizer: Option<OptimizerState>,
}

#[derive(Serialize, Deserialize)]
struct RngState {
    seed: u64,
    step: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    center_schedule: ScheduleDescriptor,
    motion_schedule: ScheduleDescriptor,
    step: usize,
    rng: RngState,
}

impl Checkpoint {
    pub fn new(config: &TrainConfig, state: &ModelState, opt: Option<&AdamW>, step: usize) -> Self {
        Self {
            config: config.clone(),
            center_schedule: config.center_schedule(),
            motion_schedule: config.motion_schedule(),
            step,
            seed: config.seed,
            params: state.store().iter().map(|p| (p.name.clone(), p.value.clone())).collect(),
            optimizer: opt.map(|o| OptimizerState {
                t: o.t.clone(),
                m: o.m.clone(),
                v: o.v.clone(),
            }),
        }
    }

    /// Model parameters laid out for the stored config.
    pub fn state(&self) -> Result<ModelState> {
        ModelState::from_named(self.config.model.clone(), &self.params)
    }

    pub fn adamw(&self) -> Option<AdamW> {
        self.optimizer.as_ref().map(|o| AdamW {
            m: o.m.clone(),
            v: o.v.clone(),
            t: o.t.clone(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            config: self.config.clone(),
            center_schedule: self.center_schedule,
            motion_schedule: self.motion_schedule,
            step: self.step,
            rng: RngState {
                seed: self.seed,
                step: self.step,
            },
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        buf.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in &self.params {
            buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            put_tensor(&mut buf, t);
        }
        match &self.optimizer {
            None => buf.push(0),
            Some(o) => {
                buf.push(1);
                for i in 0..o.t.len() {
                    buf.extend_from_slice(&o.t[i].to_le_bytes());
                    put_tensor(&mut buf, &o.m[i]);
                    put_tensor(&mut buf, &o.v[i]);
                }
            }
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        buf
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |reason: &str| DimpError::CorruptFile {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(corrupt("not a checkpoint"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(DimpError::VersionMismatch {
                path: path.to_path_buf(),
                expected: CHECKPOINT_VERSION.to_string(),
                found: version.to_string(),
            });
        }
        if bytes.len() < 12 + 32 {
            return Err(corrupt("truncated"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch"));
        }
        let mut r = Reader { buf: body, pos: 12 };
        let hlen = r.u64().ok_or_else(|| corrupt("truncated header"))? as usize;
        let json = r.take(hlen).ok_or_else(|| corrupt("truncated header"))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| corrupt(&e.to_string()))?;
        let count = r.u32().ok_or_else(|| corrupt("truncated"))? as usize;
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let nlen = r.u32().ok_or_else(|| corrupt("truncated"))? as usize;
            let name = r.take(nlen).ok_or_else(|| corrupt("truncated"))?;
            let name = String::from_utf8(name.to_vec()).map_err(|_| corrupt("parameter name is not UTF-8"))?;
            let t = r.tensor().ok_or_else(|| corrupt("truncated"))?;
            params.push((name, t));
        }
        let optimizer = match r.take(1).ok_or_else(|| corrupt("truncated"))?[0] {
            0 => None,
            1 => {
                let mut o = OptimizerState {
                    t: Vec::with_capacity(count),
                    m: Vec::with_capacity(count),
                    v: Vec::with_capacity(count),
                };
                for _ in 0..count {
                    o.t.push(r.u64().ok_or_else(|| corrupt("truncated"))?);
                    o.m.push(r.tensor().ok_or_else(|| corrupt("truncated"))?);
                    o.v.push(r.tensor().ok_or_else(|| corrupt("truncated"))?);
                }
                Some(o)
            }
            _ => return Err(corrupt("bad optimizer flag")),
        };
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Self {
            config: header.config,
            center_schedule: header.center_schedule,
            motion_schedule: header.motion_schedule,
            step: header.step,
            seed: header.rng.seed,
            params,
            optimizer,
        })
    }
}

fn put_tensor(buf: &mut Vec<u8>, t: &Tensor) {
    buf.extend_from_slice(&(t.nrows() as u32).to_le_bytes());
    buf.extend_from_slice(&(t.ncols() as u32).to_le_bytes());
    for v in t.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }

    fn tensor(&mut self) -> Option<Tensor> {
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let raw = self.take(rows.checked_mul(cols)?.checked_mul(8)?)?;
        let vals = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::from_shape_vec((rows, cols), vals).ok()
    }
}

/// Write to a temporary sibling, then rename into place.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, ckpt.to_bytes()).map_err(|e| DimpError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| DimpError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| DimpError::io(path, e))?;
    Checkpoint::from_bytes(&bytes, path)
}
