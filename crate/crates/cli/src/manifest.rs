//! `manifest.json`: config hash, seed, summary statistics and output hashes.
//! Contains no timestamps or absolute paths, so reruns reproduce it exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub summary: BTreeMap<String, serde_json::Value>,
    /// File name to SHA-256 of its contents.
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str, config_text: &str, seed: u64, summary: BTreeMap<String, serde_json::Value>) -> Self {
        Self { command: command.into(), config_sha256: sha256_hex(config_text.as_bytes()), seed, summary, files: BTreeMap::new() }
    }

    pub fn hash_files(&mut self, dir: &Path, names: &[String]) -> Result<(), CliError> {
        for name in names {
            let bytes = fs::read(dir.join(name))?;
            self.files.insert(name.clone(), sha256_hex(&bytes));
        }
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| CliError::Io(e.to_string()))?;
        text.push('\n');
        fs::write(dir.join("manifest.json"), text)?;
        Ok(())
    }
}
