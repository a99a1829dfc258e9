//! Binary checkpoint format.
//!
//! ```text
//! "MOPA1"
//! u32 config length, config text (canonical key=value lines)
//! u32 record count
//! per record: u32 name length, name, u32 rank, u64 extents…, f64 payload
//! u64 FNV-1a checksum of everything above
//! ```
//! Integers and floats are little-endian.

use std::fs;
use std::path::Path;

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::numcore::{ParamMap, Scalar, Tensor};

use super::{weights::layout, ModelConfig, Weights};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"MOPA1";

/// Model weights plus anything else a run needs to resume: free-form
/// metadata and extra named tensors (optimizer moments).
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub config: ModelConfig,
    pub weights: Weights<T>,
    pub meta: KeyValues,
    pub extra: ParamMap<T>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(config: ModelConfig, weights: Weights<T>) -> Self {
        Self {
            config,
            weights,
            meta: KeyValues::default(),
            extra: ParamMap::new(),
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::invalid("checkpoint field exceeds u32"))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn save_checkpoint<T: Scalar>(ckpt: &Checkpoint<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    ckpt.weights.check(&ckpt.config)?;
    let mut header = KeyValues::default();
    for (k, v) in ckpt.config.to_kv().0 {
        header.insert(format!("model.{k}"), v);
    }
    for (k, v) in &ckpt.meta.0 {
        header.insert(format!("meta.{k}"), v);
    }
    let text = header.render();

    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, text.len())?;
    out.extend_from_slice(text.as_bytes());
    let records: Vec<(&String, &Tensor<T>)> = ckpt.weights.params.iter().chain(&ckpt.extra).collect();
    put_u32(&mut out, records.len())?;
    for (name, t) in records {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.rank())?;
        for &e in t.shape() {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    let sum = fnv1a(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Corrupt("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..4] != b"MOPA" {
        return Err(Error::BadMagic);
    }
    if &bytes[..5] != CHECKPOINT_MAGIC {
        return Err(Error::VersionMismatch {
            found: String::from_utf8_lossy(&bytes[..5]).into_owned(),
        });
    }
    if bytes.len() < 13 {
        return Err(Error::Corrupt("truncated file".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);

    let mut r = Reader { bytes: body, pos: 5 };
    let text_len = r.u32()?;
    let text = std::str::from_utf8(r.take(text_len)?)
        .map_err(|_| Error::Corrupt("config block is not UTF-8".into()))?;
    let header = KeyValues::parse(text, path)?;
    let mut model_kv = KeyValues::default();
    let mut meta = KeyValues::default();
    for (k, v) in &header.0 {
        match k.split_once('.') {
            Some(("model", rest)) => model_kv.insert(rest, v),
            Some(("meta", rest)) => meta.insert(rest, v),
            _ => return Err(Error::Corrupt(format!("unexpected header key {k:?}"))),
        }
    }
    let config = ModelConfig::from_kv(&model_kv)?;

    let count = r.u32()?;
    let mut records = ParamMap::new();
    for _ in 0..count {
        let name_len = r.u32()?;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Corrupt("record name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()?;
        let shape = (0..rank)
            .map(|_| r.u64().map(|e| e as usize))
            .collect::<Result<Vec<_>>>()?;
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| Error::Corrupt(format!("{name}: extents overflow")))?;
        let raw = r.take(len.checked_mul(8).ok_or_else(|| Error::Corrupt("record too large".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect();
        if records.insert(name.clone(), Tensor::new(shape, data)?).is_some() {
            return Err(Error::Corrupt(format!("duplicate record {name}")));
        }
    }
    if r.pos != body.len() {
        return Err(Error::Corrupt("trailing bytes after records".into()));
    }
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    if stored != fnv1a(body) {
        return Err(Error::Corrupt("checksum mismatch".into()));
    }

    let mut params = ParamMap::new();
    for (name, _) in layout(&config) {
        let t = records
            .remove(&name)
            .ok_or_else(|| Error::ShapeMismatch(format!("checkpoint lacks parameter {name}")))?;
        params.insert(name, t);
    }
    let weights = Weights { params };
    weights.check(&config)?;
    Ok(Checkpoint {
        config,
        weights,
        meta,
        extra: records,
    })
}

/// Loads a checkpoint and requires its model config to equal `expected`.
pub fn load_checkpoint_for<T: Scalar>(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<Checkpoint<T>> {
    let ckpt = load_checkpoint(path)?;
    if &ckpt.config != expected {
        let theirs = ckpt.config.to_kv();
        let diffs: Vec<String> = expected
            .to_kv()
            .0
            .iter()
            .filter(|(k, v)| theirs.get(k) != Some(v.as_str()))
            .map(|(k, v)| format!("{k}: requested {v}, checkpoint {}", theirs.get(k).unwrap_or("-")))
            .collect();
        return Err(Error::ConfigMismatch(diffs.join("; ")));
    }
    Ok(ckpt)
}
