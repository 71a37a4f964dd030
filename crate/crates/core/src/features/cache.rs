//! On-disk feature cache.
//!
//! Layout, little endian:
//! `b"FSFC"`, version u32, kind u32, rows u32, cols u32, mask offset u64,
//! reserved u32 (32 bytes), then `rows * cols` f32 values row-major, then one
//! mask byte per row.

use std::io::{Read, Write};
use std::path::Path;

use super::{FeatureKind, FeatureMatrix, FeatureMeta};
use crate::error::{Error, Result};

pub const CACHE_HEADER_LEN: usize = 32;
const MAGIC: &[u8; 4] = b"FSFC";
const VERSION: u32 = 1;

pub fn write_cache(path: &Path, fm: &FeatureMatrix) -> Result<()> {
    let values = fm.rows * fm.cols;
    let mut out = Vec::with_capacity(CACHE_HEADER_LEN + values * 4 + fm.rows);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&fm.kind.code().to_le_bytes());
    out.extend_from_slice(&(fm.rows as u32).to_le_bytes());
    out.extend_from_slice(&(fm.cols as u32).to_le_bytes());
    out.extend_from_slice(&((CACHE_HEADER_LEN + values * 4) as u64).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for v in &fm.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend(fm.mask.iter().map(|&m| m as u8));
    std::fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

fn bad(path: &Path, reason: &str) -> Error {
    Error::Parse {
        context: path.display().to_string(),
        reason: reason.to_string(),
    }
}

pub fn read_cache(path: &Path) -> Result<FeatureMatrix> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < CACHE_HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(bad(path, "not a feature cache"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let kind =
        FeatureKind::from_code(u32_at(8)).ok_or_else(|| bad(path, "unknown feature kind"))?;
    let (rows, cols) = (u32_at(12) as usize, u32_at(16) as usize);
    let mask_at = u64::from_le_bytes(bytes[20..28].try_into().unwrap()) as usize;
    if mask_at != CACHE_HEADER_LEN + rows * cols * 4 || bytes.len() != mask_at + rows {
        return Err(bad(path, "size does not match header"));
    }
    let data = bytes[CACHE_HEADER_LEN..mask_at]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(FeatureMatrix {
        data,
        rows,
        cols,
        mask: bytes[mask_at..].iter().map(|&b| b != 0).collect(),
        kind,
        meta: FeatureMeta::default(),
    })
}
