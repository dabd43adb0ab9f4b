//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "CIC1" | version u32 | config hash [32]
//! config text: len u64 + UTF-8 bytes
//! epoch u64 | seed u64 | step u64
//! tensor count u32, then per tensor:
//!     name len u32 + UTF-8 | ndim u32 | dims u64 × ndim | values f64 × prod(dims)
//! SHA-256 of everything above [32]
//! ```
//!
//! Every random stream of a run is derived from the seed and the
//! epoch/step counters, so those three numbers are the complete RNG state.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::data::ChannelStats;
use crate::error::{Error, Result};
use crate::netbuilder::{Network, NetworkConfig};

pub const MAGIC: &[u8; 4] = b"CIC1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: NetworkConfig,
    /// Completed epochs.
    pub epoch: u64,
    pub seed: u64,
    /// Completed optimizer steps.
    pub step: u64,
    /// Parameters, batch-norm running statistics and `velocity/`-prefixed
    /// optimizer state.
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Copies stored parameters and running statistics into `net`, which must
    /// have been built from the same configuration.
    /// Input normalization statistics, when the run recorded them.
    pub fn input_stats(&self) -> Option<ChannelStats> {
        Some(ChannelStats {
            mean: self.tensor("input/mean")?.values.clone(),
            std: self.tensor("input/std")?.values.clone(),
        })
    }

    pub fn restore_network(&self, net: &mut Network) -> Result<()> {
        if net.config().hash() != self.config.hash() {
            return Err(Error::Compat(
                "checkpoint was written for a different network".into(),
            ));
        }
        let copy = |name: &str, values: &mut [f64]| -> Result<()> {
            let stored = self
                .tensor(name)
                .ok_or_else(|| Error::Compat(format!("checkpoint has no tensor '{name}'")))?;
            if stored.values.len() != values.len() {
                return Err(Error::Compat(format!(
                    "tensor '{name}' has {} values, network expects {}",
                    stored.values.len(),
                    values.len()
                )));
            }
            values.copy_from_slice(&stored.values);
            Ok(())
        };
        for p in net.params_mut() {
            copy(&p.name, p.values)?;
        }
        for (name, values) in net.buffers_mut() {
            copy(&name, values)?;
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let text = ck.config.to_text();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    out.extend_from_slice(&ck.config.hash());
    put_u64(&mut out, text.len() as u64);
    out.extend_from_slice(text.as_bytes());
    put_u64(&mut out, ck.epoch);
    put_u64(&mut out, ck.seed);
    put_u64(&mut out, ck.step);
    put_u32(&mut out, ck.tensors.len() as u32);
    for t in &ck.tensors {
        put_u32(&mut out, t.name.len() as u32);
        out.extend_from_slice(t.name.as_bytes());
        put_u32(&mut out, t.dims.len() as u32);
        for &d in &t.dims {
            put_u64(&mut out, d as u64);
        }
        for v in &t.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, wide: bool) -> std::result::Result<usize, String> {
        let v = if wide { self.u64()? } else { u64::from(self.u32()?) };
        let v = usize::try_from(v).map_err(|_| format!("length {v} too large"))?;
        if v > self.bytes.len() {
            return Err(format!("length {v} exceeds the file"));
        }
        Ok(v)
    }

    fn string(&mut self, wide: bool) -> std::result::Result<String, String> {
        let n = self.len(wide)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| "string is not UTF-8".to_string())
    }
}

/// Parses a checkpoint. With `expected`, a different configuration hash is
/// a compatibility error.
pub fn decode(bytes: &[u8], path: &Path, expected: Option<&NetworkConfig>) -> Result<Checkpoint> {
    let bad = |reason: String| Error::format(path, reason);
    if bytes.len() < 4 + 4 + 32 + 32 || &bytes[..4] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    let mut r = Reader { bytes: body, pos: 4 };
    let version = r.u32().map_err(bad)?;
    if version != VERSION {
        return Err(Error::Compat(format!(
            "checkpoint version {version}, expected {VERSION}"
        )));
    }
    let hash: [u8; 32] = r.take(32).map_err(bad)?.try_into().expect("32 bytes");
    if let Some(cfg) = expected {
        if cfg.hash() != hash {
            return Err(Error::Compat(format!(
                "checkpoint config hash does not match network '{}'",
                cfg.name
            )));
        }
    }
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("checksum mismatch; file is corrupt".into()));
    }
    let text = r.string(true).map_err(bad)?;
    let config = NetworkConfig::parse(&text)?;
    if config.hash() != hash {
        return Err(bad("stored configuration does not match its hash".into()));
    }
    let epoch = r.u64().map_err(bad)?;
    let seed = r.u64().map_err(bad)?;
    let step = r.u64().map_err(bad)?;
    let count = r.u32().map_err(bad)? as usize;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name = r.string(false).map_err(bad)?;
        let ndim = r.len(false).map_err(bad)?;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(r.len(true).map_err(bad)?);
        }
        let n: usize = dims.iter().product();
        let raw = r
            .take(n.checked_mul(8).ok_or_else(|| bad("tensor too large".into()))?)
            .map_err(bad)?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push(NamedTensor { name, dims, values });
    }
    if r.pos != body.len() {
        return Err(bad(format!("{} trailing bytes", body.len() - r.pos)));
    }
    Ok(Checkpoint {
        config,
        epoch,
        seed,
        step,
        tensors,
    })
}

/// Writes atomically: a sibling temporary file is renamed over `path`.
pub fn checkpoint_save(path: &Path, ck: &Checkpoint) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode(ck)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn checkpoint_load(path: &Path, expected: Option<&NetworkConfig>) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path, expected)
}
