//! Self-describing checkpoint files.
//!
//! Layout, little endian: `b"FSCK"`, version u32, config JSON length u32,
//! config JSON, parameter count u32, then per parameter: name length u16,
//! name, rank u8, dims u32 each, f32 values. A CRC-32 of everything before it
//! closes the file.

use std::path::Path;

use super::model::Model;
use super::params::{ParamSet, Tensor};
use super::ModelConfig;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FSCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(model: &Model<f32>, path: &Path) -> Result<()> {
    if !model.params.all_finite() {
        return Err(Error::NonFiniteActivation(
            "refusing to save non-finite parameters".into(),
        ));
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let cfg = serde_json::to_vec(&model.cfg)?;
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for (_, name, t) in model.params.iter() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape.len() as u8);
        for &d in &t.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &t.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    std::fs::write(path, out)?;
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
            .ok_or(Error::ChecksumMismatch)?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Model<f32>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::ChecksumMismatch);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(trailer.try_into().unwrap()) {
        return Err(Error::ChecksumMismatch);
    }
    let mut r = Reader {
        bytes: body,
        pos: 8,
    };
    let cfg_len = r.u32()? as usize;
    let cfg: ModelConfig = serde_json::from_slice(r.take(cfg_len)?)?;
    let n = r.u32()? as usize;
    let mut params = ParamSet::default();
    for _ in 0..n {
        let name_len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|e| Error::Parse {
            context: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let rank = r.take(1)?[0] as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let values = r
            .take(len * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.add(name, Tensor::from_vec(&shape, values)?);
    }
    Model::from_params(cfg, params)
}
