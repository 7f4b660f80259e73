//! The HEBC checkpoint container.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic    b"HEBC"
//! version  u32
//! hash     [u8; 32]   digest of the run configuration
//! t        u64        completed iterations
//! seed     u64        base seed of every derived stream
//! 3 × store (prior α, generator β, inference φ):
//!   adam_step  u64
//!   count      u32
//!   count × param:
//!     name     u32 length + UTF-8
//!     rank     u32, then rank × u64 sizes
//!     value, first moment, second moment: numel × f64 each
//! ```
//!
//! Because every random stream is derived from `(seed, t, …)`, the seed and
//! counter are the whole RNG state. Loading fails closed on any version,
//! hash or manifest mismatch.

use std::path::Path;

use crate::diffcore::ParamStore;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::scalar::Scalar;
use crate::trainer::TrainState;

pub const HEBC_MAGIC: &[u8; 4] = b"HEBC";
pub const HEBC_VERSION: u32 = 1;

pub type ConfigHash = [u8; 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub version: u32,
    pub config_hash: ConfigHash,
    pub t: u64,
    pub seed: u64,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_floats<T: Scalar>(out: &mut Vec<u8>, vals: &[T]) {
    for v in vals {
        out.extend_from_slice(&v.as_f64().to_le_bytes());
    }
}

fn put_store<T: Scalar>(out: &mut Vec<u8>, store: &ParamStore<T>) {
    put_u64(out, store.step_count());
    put_u32(out, store.len() as u32);
    for p in store.params() {
        put_u32(out, p.name.len() as u32);
        out.extend_from_slice(p.name.as_bytes());
        put_u32(out, p.value.shape().len() as u32);
        for &d in p.value.shape() {
            put_u64(out, d as u64);
        }
        put_floats(out, p.value.data());
        put_floats(out, &p.first_moment);
        put_floats(out, &p.second_moment);
    }
}

pub fn encode_checkpoint<T: Scalar>(state: &TrainState<T>, config_hash: &ConfigHash) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(HEBC_MAGIC);
    put_u32(&mut out, HEBC_VERSION);
    out.extend_from_slice(config_hash);
    put_u64(&mut out, state.t);
    put_u64(&mut out, state.seed);
    put_store(&mut out, state.model.energy.params());
    put_store(&mut out, state.model.generator.params());
    put_store(&mut out, state.model.inference.params());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        match self.pos.checked_add(n) {
            Some(end) if end <= self.bytes.len() => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            _ => Err(Error::Checkpoint(format!(
                "truncated {what} at byte {}: need {n} bytes, have {}",
                self.pos,
                self.bytes.len() - self.pos
            ))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn floats<T: Scalar>(&mut self, n: usize, what: &str) -> Result<Vec<T>> {
        let len = n.checked_mul(8).ok_or_else(|| Error::Checkpoint(format!("{what} too large")))?;
        Ok(self
            .take(len, what)?
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect())
    }
}

fn read_header(r: &mut Reader<'_>) -> Result<CheckpointHeader> {
    if r.take(4, "magic")? != HEBC_MAGIC {
        return Err(Error::Checkpoint("not a HEBC checkpoint (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != HEBC_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}, this build reads {HEBC_VERSION}"
        )));
    }
    let config_hash: ConfigHash = r.take(32, "config hash")?.try_into().expect("32 bytes");
    Ok(CheckpointHeader {
        version,
        config_hash,
        t: r.u64("iteration")?,
        seed: r.u64("seed")?,
    })
}

pub fn checkpoint_header(bytes: &[u8]) -> Result<CheckpointHeader> {
    read_header(&mut Reader { bytes, pos: 0 })
}

/// Overwrites `store` in place, requiring the stored manifest to match it.
fn read_store<T: Scalar>(r: &mut Reader<'_>, store: &mut ParamStore<T>, which: &str) -> Result<()> {
    let step = r.u64("adam step")?;
    let count = r.u32("parameter count")? as usize;
    if count != store.len() {
        return Err(Error::Checkpoint(format!(
            "{which}: checkpoint has {count} tensors, model has {}",
            store.len()
        )));
    }
    for p in store.params_mut() {
        let n = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(n, "name")?)
            .map_err(|_| Error::Checkpoint(format!("{which}: parameter name is not UTF-8")))?;
        if name != p.name {
            return Err(Error::Checkpoint(format!("{which}: expected tensor {}, found {name}", p.name)));
        }
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u64("shape")? as usize);
        }
        if shape != p.value.shape() {
            return Err(Error::Checkpoint(format!(
                "{which}: tensor {name} has shape {shape:?}, model expects {:?}",
                p.value.shape()
            )));
        }
        let numel = p.value.len();
        let value = r.floats::<T>(numel, "values")?;
        p.value.data_mut().copy_from_slice(&value);
        p.first_moment = r.floats(numel, "first moments")?;
        p.second_moment = r.floats(numel, "second moments")?;
        p.grad.iter_mut().for_each(|g| *g = T::zero());
    }
    store.set_step_count(step);
    Ok(())
}

/// Restores a training state into a model of the same architecture. With
/// `expected_hash` set, a checkpoint written under a different configuration
/// is rejected.
pub fn decode_checkpoint<T: Scalar>(
    bytes: &[u8],
    mut model: Model<T>,
    expected_hash: Option<&ConfigHash>,
) -> Result<TrainState<T>> {
    let mut r = Reader { bytes, pos: 0 };
    let header = read_header(&mut r)?;
    if let Some(h) = expected_hash {
        if h != &header.config_hash {
            return Err(Error::Checkpoint("configuration hash differs from the checkpoint's".into()));
        }
    }
    read_store(&mut r, model.energy.params_mut(), "prior")?;
    read_store(&mut r, model.generator.params_mut(), "generator")?;
    read_store(&mut r, model.inference.params_mut(), "inference")?;
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(TrainState {
        t: header.t,
        model,
        seed: header.seed,
    })
}

/// Writes through a temporary sibling and renames, so a crash never leaves
/// a half-written checkpoint under `path`.
pub fn save_checkpoint<T: Scalar>(path: &Path, state: &TrainState<T>, config_hash: &ConfigHash) -> Result<()> {
    let tmp = path.with_extension("hebc.tmp");
    std::fs::write(&tmp, encode_checkpoint(state, config_hash))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path, model: Model<T>, expected_hash: Option<&ConfigHash>) -> Result<TrainState<T>> {
    decode_checkpoint(&std::fs::read(path)?, model, expected_hash)
}
