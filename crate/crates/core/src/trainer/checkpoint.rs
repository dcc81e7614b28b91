//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "NCCK" | u32 version | u32 len, config hash (hex) | u64 step
//! | u8 has_val, f64 val_loss | u32 len, config key-value text
//! | u32 count, params  | u32 count, buffers
//! | sha256 of everything above
//! ```
//!
//! Each tensor entry is `u32 len, name | u32 ndim, u64 dims.. | f32 values`.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};

pub const MAGIC: &[u8; 4] = b"NCCK";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub step: u64,
    pub val_loss: Option<f64>,
}

impl Checkpoint {
    pub fn new(model: Model<f32>, step: u64, val_loss: Option<f64>) -> Self {
        Checkpoint { model, step, val_loss }
    }

    pub fn config(&self) -> &ModelConfig {
        self.model.config()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let config = self.model.config();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        put_str(&mut out, &config.hash());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.push(u8::from(self.val_loss.is_some()));
        out.extend_from_slice(&self.val_loss.unwrap_or(0.0).to_le_bytes());
        put_str(&mut out, &config.to_kv());
        put_len(&mut out, self.model.params.len());
        for (_, p) in self.model.params.iter() {
            put_tensor(&mut out, &p.name, p.value.shape(), p.value.data());
        }
        put_len(&mut out, self.model.buffers.len());
        for (_, name, t) in self.model.buffers.iter() {
            put_tensor(&mut out, name, t.shape(), t.data());
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + DIGEST_LEN {
            return Err(corrupt("file is too short"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(corrupt("checksum mismatch"));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(corrupt(format!("unsupported format version {version}")));
        }
        let stored_hash = r.string()?;
        let step = r.u64()?;
        let has_val = r.take(1)?[0];
        let val = f64::from_le_bytes(r.array()?);
        let val_loss = match has_val {
            0 => None,
            1 => Some(val),
            b => return Err(corrupt(format!("bad validation flag {b}"))),
        };
        let config = ModelConfig::from_kv(&r.string()?).map_err(|e| corrupt(format!("config: {e}")))?;
        if config.hash() != stored_hash {
            return Err(corrupt("stored config hash does not match the stored config"));
        }
        let mut model = Model::<f32>::new(config, 0).map_err(|e| corrupt(format!("config: {e}")))?;

        let count = r.u32()? as usize;
        if count != model.params.len() {
            return Err(corrupt(format!("expected {} parameters, found {count}", model.params.len())));
        }
        for _ in 0..count {
            let (name, shape, values) = r.tensor()?;
            let id = model.params.find(&name).ok_or_else(|| corrupt(format!("unknown parameter {name}")))?;
            let p = model.params.get_mut(id);
            if p.value.shape() != shape.as_slice() {
                return Err(corrupt(format!("parameter {name} has shape {shape:?}, expected {:?}", p.value.shape())));
            }
            p.value.data_mut().copy_from_slice(&values);
        }
        let count = r.u32()? as usize;
        if count != model.buffers.len() {
            return Err(corrupt(format!("expected {} buffers, found {count}", model.buffers.len())));
        }
        for _ in 0..count {
            let (name, shape, values) = r.tensor()?;
            let id = model.buffers.find(&name).ok_or_else(|| corrupt(format!("unknown buffer {name}")))?;
            let t = model.buffers.get_mut(id);
            if t.shape() != shape.as_slice() {
                return Err(corrupt(format!("buffer {name} has shape {shape:?}, expected {:?}", t.shape())));
            }
            t.data_mut().copy_from_slice(&values);
        }
        if r.pos != body.len() {
            return Err(corrupt(format!("{} trailing bytes", body.len() - r.pos)));
        }
        Ok(Checkpoint { model, step, val_loss })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

/// Loads a checkpoint and refuses it unless it was written for `expected`.
pub fn load_checkpoint_for(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    let (want, found) = (expected.hash(), ckpt.config().hash());
    if want != found {
        return Err(Error::ConfigMismatch { expected: want, found });
    }
    Ok(ckpt)
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(msg.into())
}

fn put_len(out: &mut Vec<u8>, n: usize) {
    out.extend_from_slice(&(n as u32).to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_len(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f32]) {
    put_str(out, name);
    put_len(out, shape.len());
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| corrupt("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| corrupt("invalid utf-8"))
    }

    fn tensor(&mut self) -> Result<(String, Vec<usize>, Vec<f32>)> {
        let name = self.string()?;
        let ndim = self.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| self.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| corrupt("shape overflow"))?;
        let raw = self.take(numel.checked_mul(4).ok_or_else(|| corrupt("shape overflow"))?)?;
        let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4"))).collect();
        Ok((name, shape, values))
    }
}
