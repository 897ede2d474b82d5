use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::files;

pub const MANIFEST_JSON: &str = "manifest.json";

/// Provenance record written next to every command's outputs.
///
/// Holds no timestamps, so re-running a deterministic command reproduces it
/// byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    /// Input name to SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
    /// Output file name to SHA-256 of its contents.
    pub outputs: BTreeMap<String, String>,
    /// Digests the outputs are bound to (grid, normalization statistics).
    pub bindings: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new<C: Serialize>(command: &str, seed: Option<u64>, config: &C) -> Result<Self> {
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            config: serde_json::to_value(config)
                .map_err(|e| CliError::Config(format!("config cannot be recorded: {e}")))?,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            bindings: BTreeMap::new(),
        })
    }

    pub fn input_file(&mut self, path: &Path) -> Result<()> {
        let digest = files::sha256_file(path)?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn input_digest(&mut self, name: &str, digest: String) {
        self.inputs.insert(name.into(), digest);
    }

    pub fn bind(&mut self, name: &str, digest: String) {
        self.bindings.insert(name.into(), digest);
    }

    /// Record the digests of files already written to `dir`.
    pub fn outputs_in(&mut self, dir: &Path, names: &[&str]) -> Result<()> {
        for name in names {
            self.outputs
                .insert(name.to_string(), files::sha256_file(&dir.join(name))?);
        }
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        files::write_json(&dir.join(MANIFEST_JSON), self)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        files::read_json(&dir.join(MANIFEST_JSON))
    }

    /// Fail unless `dir/name` still has the digest recorded for it.
    pub fn verify_output(&self, dir: &Path, name: &str) -> Result<()> {
        let expected = self
            .outputs
            .get(name)
            .ok_or_else(|| CliError::format(dir.join(MANIFEST_JSON), format!("no digest for {name}")))?;
        let actual = files::sha256_file(&dir.join(name))?;
        if *expected != actual {
            return Err(CliError::Digest {
                what: dir.join(name).display().to_string(),
                expected: expected.clone(),
                actual,
            });
        }
        Ok(())
    }
}
