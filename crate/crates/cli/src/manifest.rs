//! Run manifests: enough provenance to reproduce any command's outputs
//! exactly (inputs by digest, the resolved configuration, the seed set,
//! and the tool version).

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub seeds: Vec<u64>,
    pub tool_version: String,
    pub timestamp: String,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hex_string(&hasher.finalize()))
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    /// Digests are taken now, before the command does any work.
    pub fn new(
        command: &str,
        config: serde_json::Value,
        input_paths: &[&Path],
        seeds: Vec<u64>,
    ) -> Result<Self, CliError> {
        let inputs = input_paths
            .iter()
            .map(|path| {
                Ok(InputDigest {
                    path: path.display().to_string(),
                    sha256: sha256_file(path)?,
                })
            })
            .collect::<Result<Vec<_>, CliError>>()?;
        Ok(RunManifest {
            command: command.to_string(),
            config,
            inputs,
            seeds,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: chrono::Utc::now().to_rfc3339(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<PathBuf, CliError> {
        let json = serde_json::to_string_pretty(self)
            .expect("manifest serialization cannot fail");
        std::fs::write(path, json)
            .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))?;
        Ok(path.to_path_buf())
    }
}
