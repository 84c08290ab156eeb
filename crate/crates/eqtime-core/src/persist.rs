//! Two-line versioned file container: a JSON header with version and
//! payload checksum, then the payload JSON as raw bytes. The checksum is
//! taken over the exact payload bytes, so round-trips are verifiable.

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    sha256: String,
}

pub(crate) fn save<T: Serialize>(path: &Path, format: &str, version: u32, payload: &T) -> Result<()> {
    let body = serde_json::to_string(payload)
        .map_err(|e| Error::Persistence(format!("serialize {format}: {e}")))?;
    let digest = hex::encode(Sha256::digest(body.as_bytes()));
    let header = serde_json::to_string(&Header {
        format: format.to_string(),
        version,
        sha256: digest,
    })
    .map_err(|e| Error::Persistence(format!("serialize header: {e}")))?;
    std::fs::write(path, format!("{header}\n{body}\n"))?;
    Ok(())
}

pub(crate) fn load<T: DeserializeOwned>(path: &Path, format: &str, version: u32) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Persistence(format!("read {}: {e}", path.display())))?;
    let (header_line, body) = text
        .split_once('\n')
        .ok_or_else(|| Error::Persistence("missing payload line".into()))?;
    let header: Header = serde_json::from_str(header_line)
        .map_err(|e| Error::Persistence(format!("bad header: {e}")))?;
    if header.format != format {
        return Err(Error::Persistence(format!(
            "expected {format} file, found {:?}",
            header.format
        )));
    }
    if header.version != version {
        return Err(Error::Persistence(format!(
            "unsupported {format} version {} (expected {version})",
            header.version
        )));
    }
    let body = body.strip_suffix('\n').unwrap_or(body);
    let digest = hex::encode(Sha256::digest(body.as_bytes()));
    if digest != header.sha256 {
        return Err(Error::Persistence("checksum mismatch, file corrupted".into()));
    }
    serde_json::from_str(body).map_err(|e| Error::Persistence(format!("bad payload: {e}")))
}
