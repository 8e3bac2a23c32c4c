//! Atomic file output.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Write `bytes` to `path` through a temporary sibling file and a rename, so
/// readers never observe a partially written artifact.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if path.as_os_str().is_empty() {
        return Err(Error::arg("output path is empty"));
    }
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::Builder::new()
        .prefix(".spinemorph-")
        .suffix(".tmp")
        .tempfile_in(dir)
        .map_err(|e| Error::at_path(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::at_path(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::at_path(path, e))?;
    tmp.persist(path).map_err(|e| Error::at_path(path, e.error))?;
    Ok(())
}

/// Serialize to pretty JSON with a trailing newline and write atomically.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::at_path(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}
