//! On-disk artifact container and atomic file writes.
//!
//! Binary artifacts share one layout:
//!
//! ```text
//! bytes 0..8   magic (artifact kind)
//! bytes 8..16  header length H, u64 little-endian
//! bytes 16..16+H  JSON header
//! bytes 16+H..    payload (kind-specific, typically f64 little-endian)
//! ```
//!
//! Writes go through a temp file in the destination directory followed by a
//! rename, so re-running a command never leaves a partial artifact behind.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{de::DeserializeOwned, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC_LEN: usize = 8;

/// Writes `bytes` to `path` atomically (temp file + rename).
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = match dir {
        Some(dir) => tempfile::NamedTempFile::new_in(dir)?,
        None => tempfile::NamedTempFile::new_in(".")?,
    };
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path)
        .map_err(|e| Error::artifact(path, format!("atomic rename failed: {}", e.error)))?;
    Ok(())
}

/// Serializes a container with the given magic, JSON header, and payload.
pub fn write_container<H: Serialize>(
    path: &Path,
    magic: &[u8; MAGIC_LEN],
    header: &H,
    payload: &[u8],
) -> Result<()> {
    let header_bytes = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(16 + header_bytes.len() + payload.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    out.extend_from_slice(payload);
    write_atomic(path, &out)
}

/// Reads a container, validating the magic, and returns header + payload.
pub fn read_container<H: DeserializeOwned>(
    path: &Path,
    magic: &[u8; MAGIC_LEN],
) -> Result<(H, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::artifact(path, format!("read failed: {e}")))?;
    if bytes.len() < 16 {
        return Err(Error::artifact(path, "file too short for container header"));
    }
    if &bytes[..MAGIC_LEN] != magic {
        return Err(Error::artifact(
            path,
            format!(
                "bad magic {:?}, expected {:?}",
                &bytes[..MAGIC_LEN],
                magic
            ),
        ));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    if bytes.len() < 16 + hlen {
        return Err(Error::artifact(path, "truncated container header"));
    }
    let header: H = serde_json::from_slice(&bytes[16..16 + hlen])
        .map_err(|e| Error::artifact(path, format!("bad header JSON: {e}")))?;
    Ok((header, bytes[16 + hlen..].to_vec()))
}

/// Encodes f64 values as a little-endian payload block.
pub fn encode_f64s(values: impl IntoIterator<Item = f64>) -> Vec<u8> {
    let mut out = Vec::new();
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes a little-endian f64 payload block.
pub fn decode_f64s(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(Error::InvalidInput(format!(
            "f64 payload length {} not a multiple of 8",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

/// Hex-encoded SHA-256 of `bytes`, truncated to 16 characters.
pub fn short_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}
