//! Case loading, content digests and atomic file output.

use std::fs;
use std::io::Write;
use std::path::Path;

use pfdiff_core::casefile;
use pfdiff_core::GridCase;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Load a case from a file, or a bundled case by name (`case6ww`,
/// `case24_rts`) when no such file exists.
pub fn load_case(name_or_path: &str) -> Result<GridCase> {
    let path = Path::new(name_or_path);
    if path.is_file() {
        let text = read_string(path)?;
        return Ok(casefile::parse_case_str(&text)?);
    }
    casefile::bundled(name_or_path).ok_or_else(|| {
        CliError::Config(format!(
            "case {name_or_path:?} is neither a file nor a bundled case ({})",
            casefile::bundled_names().join(", ")
        ))
    })
}

pub fn read_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_bytes(&bytes))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Write `bytes` to `path` through a temporary file in the same directory,
/// so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    ensure_dir(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::format(path, e))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::format(path, e))
}

/// Render rows of already formatted fields as CSV.
pub fn csv_bytes<I, R>(header: &[&str], rows: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| CliError::Numerical(format!("csv encoding failed: {e}"));
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.write_record(row.into_iter()).map_err(fail)?;
    }
    w.into_inner()
        .map_err(|e| CliError::Numerical(format!("csv encoding failed: {e}")))
}
