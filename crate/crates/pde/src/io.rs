//! Grid snapshots: `SGM2GRID`, then little-endian `u64 n`, `u64 shape`,
//! `f64 R`, `f64 K` and the values row-major, with a JSON sidecar mirroring
//! the header. All files are written to a temporary sibling and renamed.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridFunction;

pub const MAGIC: &[u8; 8] = b"SGM2GRID";
const HEADER_LEN: usize = 8 + 8 + 8 + 8 + 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub magic: String,
    pub n: u64,
    pub shape: u64,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub values: u64,
    pub byte_order: String,
    pub header_bytes: u64,
}

impl GridHeader {
    pub fn of(u: &GridFunction, k: f64) -> Self {
        Self {
            magic: String::from_utf8_lossy(MAGIC).into_owned(),
            n: u.dim() as u64,
            shape: u.shape() as u64,
            r: u.half_width(),
            k,
            values: u.len() as u64,
            byte_order: "little".into(),
            header_bytes: HEADER_LEN as u64,
        }
    }
}

pub fn encode(u: &GridFunction, k: f64) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * u.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(u.dim() as u64).to_le_bytes());
    out.extend_from_slice(&(u.shape() as u64).to_le_bytes());
    out.extend_from_slice(&u.half_width().to_le_bytes());
    out.extend_from_slice(&k.to_le_bytes());
    for v in u.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn word(bytes: &[u8], at: usize) -> [u8; 8] {
    bytes[at..at + 8].try_into().expect("slice of length 8")
}

/// Inverse of [`encode`]: the grid and its K.
pub fn decode(bytes: &[u8]) -> Result<(GridFunction, f64)> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err(Error::Grid("not an SGM2GRID snapshot".into()));
    }
    let n = u64::from_le_bytes(word(bytes, 8));
    let shape = u64::from_le_bytes(word(bytes, 16));
    let r = f64::from_le_bytes(word(bytes, 24));
    let k = f64::from_le_bytes(word(bytes, 32));
    let count = shape
        .checked_pow(n as u32)
        .filter(|c| *c <= (bytes.len() / 8) as u64)
        .ok_or_else(|| Error::Grid(format!("header n={n} shape={shape} does not fit the file")))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != 8 * count as usize {
        return Err(Error::Grid(format!(
            "expected {count} values, file holds {} bytes",
            body.len()
        )));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((GridFunction::new(n as usize, shape as usize, r, values)?, k))
}

/// Writes `bytes` to a temporary file next to `path`, then renames it over
/// `path`, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// `snapshot.grid` → `snapshot.grid.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Snapshot plus sidecar.
pub fn write_grid(path: &Path, u: &GridFunction, k: f64) -> Result<()> {
    write_atomic(path, &encode(u, k))?;
    let header = serde_json::to_vec_pretty(&GridHeader::of(u, k))?;
    write_atomic(&sidecar_path(path), &header)
}

pub fn read_grid(path: &Path) -> Result<(GridFunction, f64)> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_pinned() {
        let u = GridFunction::from_fn(2, 5, 1.5, |x| x[0] - 2.0 * x[1]).unwrap();
        let bytes = encode(&u, 0.5);
        assert_eq!(&bytes[..8], b"SGM2GRID");
        assert_eq!(bytes[8..16], 2u64.to_le_bytes());
        assert_eq!(bytes[16..24], 5u64.to_le_bytes());
        assert_eq!(bytes[24..32], 1.5f64.to_le_bytes());
        assert_eq!(bytes[32..40], 0.5f64.to_le_bytes());
        assert_eq!(bytes.len(), 40 + 8 * 25);
        // first value is the corner (−R, −R)
        assert_eq!(bytes[40..48], 1.5f64.to_le_bytes());
    }

    #[test]
    fn truncated_or_foreign_files_are_rejected() {
        let u = GridFunction::from_fn(2, 5, 1.0, |x| x[0]).unwrap();
        let bytes = encode(&u, 1.0);
        assert!(decode(&bytes[..bytes.len() - 8]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        assert!(decode(b"SGM2").is_err());
    }
}
