//! TexMex `.fvecs` / `.ivecs` files.
//!
//! Each record is a little-endian `i32` count `d` followed by `d` little-endian
//! 32-bit payload values (`f32` for fvecs, `i32` for ivecs). All records in a
//! file share the same `d`.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::dataset::VectorDataset;
use crate::error::{Error, Result};

/// Parses fixed-width records, returning `(d, flat payload words)`.
fn parse_records(bytes: &[u8]) -> Result<(usize, Vec<[u8; 4]>)> {
    let mut dim: Option<usize> = None;
    let mut words = Vec::new();
    let mut off = 0usize;
    while off < bytes.len() {
        let head = bytes
            .get(off..off + 4)
            .ok_or_else(|| Error::format(off as u64, "truncated record header"))?;
        let d = i32::from_le_bytes(head.try_into().unwrap());
        if d <= 0 {
            return Err(Error::format(
                off as u64,
                format!("record dimension must be positive, found {d}"),
            ));
        }
        let d = d as usize;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(Error::InconsistentDimension {
                    offset: off as u64,
                    expected,
                    found: d,
                })
            }
            _ => {}
        }
        let body = off + 4;
        let end = body + 4 * d;
        if end > bytes.len() {
            return Err(Error::format(
                off as u64,
                format!(
                    "truncated record: needs {} payload bytes, {} available",
                    4 * d,
                    bytes.len() - body
                ),
            ));
        }
        words.extend(
            bytes[body..end]
                .chunks_exact(4)
                .map(|c| <[u8; 4]>::try_from(c).unwrap()),
        );
        off = end;
    }
    Ok((dim.unwrap_or(0), words))
}

pub fn parse_fvecs(bytes: &[u8]) -> Result<VectorDataset> {
    let (dim, words) = parse_records(bytes)?;
    let data = words.into_iter().map(f32::from_le_bytes).collect();
    VectorDataset::from_flat(dim, data)
}

pub fn parse_ivecs(bytes: &[u8]) -> Result<Vec<Vec<i32>>> {
    let (dim, words) = parse_records(bytes)?;
    if dim == 0 {
        return Ok(Vec::new());
    }
    Ok(words
        .chunks_exact(dim)
        .map(|r| r.iter().map(|w| i32::from_le_bytes(*w)).collect())
        .collect())
}

pub fn load_fvecs(path: impl AsRef<Path>) -> Result<VectorDataset> {
    parse_fvecs(&fs::read(path)?)
}

pub fn load_ivecs(path: impl AsRef<Path>) -> Result<Vec<Vec<i32>>> {
    parse_ivecs(&fs::read(path)?)
}

pub fn encode_fvecs(ds: &VectorDataset) -> Vec<u8> {
    let d = ds.dim();
    let mut out = Vec::with_capacity(ds.len() * (4 + 4 * d));
    for row in ds.iter().take(ds.len()) {
        out.extend_from_slice(&(d as i32).to_le_bytes());
        for x in row {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn encode_ivecs<R: AsRef<[i32]>>(lists: &[R]) -> Result<Vec<u8>> {
    let Some(first) = lists.first() else {
        return Ok(Vec::new());
    };
    let d = first.as_ref().len();
    if d == 0 {
        return Err(Error::invalid("ivecs records must be non-empty"));
    }
    let mut out = Vec::with_capacity(lists.len() * (4 + 4 * d));
    for list in lists {
        let list = list.as_ref();
        if list.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: list.len(),
            });
        }
        out.extend_from_slice(&(d as i32).to_le_bytes());
        for x in list {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

/// Writes `bytes` to `path` through a temporary sibling file, so a failed
/// write never leaves a partial output behind.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn save_fvecs(path: impl AsRef<Path>, ds: &VectorDataset) -> Result<()> {
    write_atomic(path, &encode_fvecs(ds))
}

pub fn save_ivecs<R: AsRef<[i32]>>(path: impl AsRef<Path>, lists: &[R]) -> Result<()> {
    write_atomic(path, &encode_ivecs(lists)?)
}
