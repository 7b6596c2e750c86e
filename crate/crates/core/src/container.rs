//! Binary container: magic, format version, JSON header, raw payload.
//!
//! ```text
//! [4]  magic
//! u32  format version (LE)
//! u64  header length in bytes (LE)
//! [..] UTF-8 JSON header
//! [..] payload: little-endian buffers, layout described by the header
//! ```

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

pub fn write<H: Serialize>(path: &Path, magic: &[u8; 4], header: &H, payload: &[u8]) -> Result<()> {
    let header = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(16 + header.len() + payload.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(payload);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read<H: DeserializeOwned>(path: &Path, magic: &[u8; 4]) -> Result<(H, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |detail: &str| Error::Corrupt {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    if bytes.len() < 16 {
        return Err(corrupt("file shorter than container preamble"));
    }
    if &bytes[0..4] != magic {
        return Err(corrupt(&format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[0..4]),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(corrupt(&format!("unsupported format version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if hlen > body.len() {
        return Err(corrupt("header length exceeds file size"));
    }
    let header = serde_json::from_slice(&body[..hlen]).map_err(|e| corrupt(&format!("header: {e}")))?;
    Ok((header, body[hlen..].to_vec()))
}
