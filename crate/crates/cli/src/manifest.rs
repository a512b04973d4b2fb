//! Run manifests: enough to repeat a command and check its inputs.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const MANIFEST_VERSION: u32 = 1;
pub const VERSION: &str = env!("PMBERT_VERSION");

#[derive(Debug, Clone, Serialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub command: String,
    pub version: &'static str,
    pub seed: u64,
    pub config_hash: String,
    pub config: RunConfig,
    pub inputs: BTreeMap<String, FileRecord>,
    pub outputs: BTreeMap<String, FileRecord>,
    pub details: serde_json::Value,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_record(path: &Path) -> Result<FileRecord> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(FileRecord {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Result<Self> {
        let canonical = serde_json::to_vec(config)?;
        Ok(Manifest {
            manifest_version: MANIFEST_VERSION,
            command: command.to_string(),
            version: VERSION,
            seed: config.seed,
            config_hash: sha256_hex(&canonical),
            config: config.clone(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            details: serde_json::Value::Null,
        })
    }

    pub fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        self.inputs.insert(role.to_string(), file_record(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        self.outputs.insert(name, file_record(path)?);
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, json + "\n").with_context(|| format!("writing {}", path.display()))
    }
}
