//! Binary checkpoint container.
//!
//! Layout, all integers little-endian `u32`:
//! `SKMD` magic, version, config length and `key=value` config text, tensor
//! count, then per tensor its name length, name, rows, cols and `rows·cols`
//! little-endian `f32` values.

use std::path::Path;

use super::net::{ModelConfig, ModelParams};
use super::tensor::Tensor;
use super::ModelError;

pub const MAGIC: &[u8; 4] = b"SKMD";
pub const VERSION: u32 = 1;

pub fn encode_checkpoint(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.scalar_count() * 4);
    let u32le = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    out.extend_from_slice(MAGIC);
    u32le(&mut out, VERSION as usize);
    let config = params.config.to_kv();
    u32le(&mut out, config.len());
    out.extend_from_slice(config.as_bytes());
    u32le(&mut out, params.tensors().len());
    for (name, t) in params.names().iter().zip(params.tensors()) {
        u32le(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        u32le(&mut out, t.rows);
        u32le(&mut out, t.cols);
        for v in &t.data {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| ModelError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")) as usize)
    }

    fn text(&mut self) -> Result<String, ModelError> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| ModelError::Checkpoint("non-UTF-8 text block".into()))
    }
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<ModelParams, ModelError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(ModelError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
    }
    let config = ModelConfig::from_kv(&r.text()?)?;
    let count = r.u32()?;
    let mut named = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.text()?;
        let (rows, cols) = (r.u32()?, r.u32()?);
        let n = rows.checked_mul(cols).ok_or_else(|| ModelError::Checkpoint("tensor too large".into()))?;
        let bytes = r.take(n.checked_mul(4).ok_or_else(|| ModelError::Checkpoint("tensor too large".into()))?)?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")) as f64).collect();
        named.push((name, Tensor::from_vec(rows, cols, data)));
    }
    if r.pos != buf.len() {
        return Err(ModelError::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    ModelParams::from_named(config, named)
}

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<(), ModelError> {
    std::fs::write(path, encode_checkpoint(params))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams, ModelError> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
    decode_checkpoint(&buf)
}
