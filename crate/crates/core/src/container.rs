//! Shared binary layout of the checkpoint, recording and spectrogram-cache
//! files: four magic bytes, a little-endian `u32` header length, a UTF-8 JSON
//! header, then a payload of little-endian `f64` values.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub(crate) fn encode<H: Serialize>(magic: &[u8; 4], header: &H, payload: &[f64]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(8 + json.len() + payload.len() * 8);
    out.extend_from_slice(magic);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub(crate) fn write<H: Serialize>(path: &Path, magic: &[u8; 4], header: &H, payload: &[f64]) -> Result<()> {
    let bytes = encode(magic, header, payload)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Parses a container. Non-finite payload values are rejected when
/// `require_finite` is set; the error carries the byte offset of the value.
pub(crate) fn decode<H: DeserializeOwned>(
    path: &Path,
    bytes: &[u8],
    magic: &[u8; 4],
    require_finite: bool,
) -> Result<(H, Vec<f64>)> {
    let parse = |offset: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        offset: offset as u64,
        message,
    };
    if bytes.len() < 8 || &bytes[..4] != magic {
        return Err(parse(0, format!("missing magic {:?}", String::from_utf8_lossy(magic))));
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = 8 + len;
    if bytes.len() < body {
        return Err(parse(4, format!("header length {len} exceeds file size")));
    }
    let header: H = serde_json::from_slice(&bytes[8..body])
        .map_err(|e| parse(8 + e.column().saturating_sub(1), format!("bad header: {e}")))?;
    let rest = &bytes[body..];
    if rest.len() % 8 != 0 {
        return Err(parse(body, format!("payload of {} bytes is not a whole number of f64", rest.len())));
    }
    let mut payload = Vec::with_capacity(rest.len() / 8);
    for (i, chunk) in rest.chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().unwrap());
        if require_finite && !v.is_finite() {
            return Err(parse(body + 8 * i, format!("non-finite value {v} at payload index {i}")));
        }
        payload.push(v);
    }
    Ok((header, payload))
}

pub(crate) fn read<H: DeserializeOwned>(path: &Path, magic: &[u8; 4], require_finite: bool) -> Result<(H, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(path, &bytes, magic, require_finite)
}
