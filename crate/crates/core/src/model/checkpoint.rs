//! Binary checkpoint format, little-endian throughout:
//!
//! ```text
//! magic    8 bytes  "MUCAPCKP"
//! version  u32
//! meta     u32 length + UTF-8 JSON {"model": ModelConfig, "extra": any}
//! count    u32
//! count × { name: u32 length + UTF-8, rank: u32, dims: rank × u64, data: numel × f64 }
//! ```

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MUCAPCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    model: ModelConfig,
    #[serde(default)]
    extra: serde_json::Value,
}

pub fn encode_checkpoint(model: &Model, extra: &serde_json::Value) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(model.params.numel() * 8 + 4096);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let meta = serde_json::to_vec(&Meta {
        model: model.config.clone(),
        extra: extra.clone(),
    })?;
    put_bytes(&mut buf, &meta);
    buf.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for (name, t) in model.params.iter() {
        put_bytes(&mut buf, name.as_bytes());
        buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in t.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(buf)
}

fn put_bytes(buf: &mut Vec<u8>, bytes: &[u8]) {
    buf.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
    buf.extend_from_slice(bytes);
}

/// Writes `model` and an arbitrary JSON `extra` record (typically the run
/// configuration).
pub fn save_checkpoint(path: &Path, model: &Model, extra: &serde_json::Value) -> Result<()> {
    let bytes = encode_checkpoint(model, extra)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.flush()?;
    Ok(())
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
            .ok_or_else(|| Error::Checkpoint(format!("truncated payload at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Model, serde_json::Value)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version} is not supported (expected {CHECKPOINT_VERSION})"
        )));
    }
    let meta: Meta =
        serde_json::from_slice(r.bytes()?).map_err(|e| Error::Checkpoint(format!("corrupt header: {e}")))?;
    let mut model = Model::new(meta.model, 0)?;
    let count = r.u32()? as usize;
    if count != model.params.len() {
        return Err(Error::Checkpoint(format!(
            "payload has {count} tensors, architecture expects {}",
            model.params.len()
        )));
    }
    for _ in 0..count {
        let name = std::str::from_utf8(r.bytes()?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().product::<usize>();
        if numel.saturating_mul(8) > bytes.len() {
            return Err(Error::Checkpoint(format!("implausible shape {shape:?} for {name}")));
        }
        let data = (0..numel).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        model
            .params
            .set(&name, t)
            .map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after payload".into()));
    }
    Ok((model, meta.extra))
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, serde_json::Value)> {
    decode_checkpoint(&std::fs::read(path)?)
}
