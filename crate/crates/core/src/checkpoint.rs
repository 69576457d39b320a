//! Binary parameter container.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! u64 version tag (currently 1)
//! u64 tensor count
//! per tensor:
//!   u64 name byte length, then that many utf-8 bytes
//!   u64 rank
//!   rank x u64 dimension sizes
//!   product(dims) x f64 data
//! ```
//!
//! Loading validates that the total byte length matches the declared
//! contents exactly.

use crate::error::{Error, Result};
use crate::params::Parameters;
use crate::tensor::Tensor;
use std::fs;
use std::path::Path;

pub const CHECKPOINT_VERSION: u64 = 1;

/// Serialize one or more named parameter stores into a single container.
/// Each store's names are prefixed (e.g. `"scn."`); the translator uses an
/// empty prefix.
pub fn save(path: &Path, stores: &[(&str, &Parameters)]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let count: u64 = stores.iter().map(|(_, p)| p.len() as u64).sum();
    buf.extend_from_slice(&count.to_le_bytes());
    for (prefix, params) in stores {
        for (name, tensor) in params.iter() {
            let full = format!("{prefix}{name}");
            buf.extend_from_slice(&(full.len() as u64).to_le_bytes());
            buf.extend_from_slice(full.as_bytes());
            buf.extend_from_slice(&(tensor.shape.len() as u64).to_le_bytes());
            for &d in &tensor.shape {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &tensor.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Load a container into a flat store keyed by the full (prefixed) names.
pub fn load(path: &Path) -> Result<Parameters> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut cursor = 0usize;

    let mut take = |n: usize| -> Result<&[u8]> {
        if cursor + n > bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated checkpoint: needed {} bytes at offset {cursor}, file has {}",
                n,
                bytes.len()
            )));
        }
        let s = &bytes[cursor..cursor + n];
        cursor += n;
        Ok(s)
    };

    let read_u64 = |s: &[u8]| u64::from_le_bytes(s.try_into().unwrap());

    let version = read_u64(take(8)?);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let count = read_u64(take(8)?) as usize;
    let mut params = Parameters::new();
    for _ in 0..count {
        let name_len = read_u64(take(8)?) as usize;
        let name = std::str::from_utf8(take(name_len)?)
            .map_err(|e| Error::Checkpoint(format!("invalid utf-8 in tensor name: {e}")))?
            .to_string();
        let rank = read_u64(take(8)?) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(take(8)?) as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = take(numel * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.insert(name, Tensor::new(shape, data));
    }
    if cursor != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} trailing bytes",
            bytes.len() - cursor
        )));
    }
    Ok(params)
}

/// Split a flat loaded store by prefix, stripping it.
pub fn extract_prefixed(flat: &Parameters, prefix: &str) -> Parameters {
    let mut out = Parameters::new();
    for (name, tensor) in flat.iter() {
        if let Some(rest) = name.strip_prefix(prefix) {
            // Names without the prefix belong to another store; a parameter
            // like "scn.conv" must not leak into the "" store.
            if prefix.is_empty() && rest.starts_with("scn.") {
                continue;
            }
            out.insert(rest, tensor.clone());
        }
    }
    out
}
