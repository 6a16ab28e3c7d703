use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliResult;

#[derive(Debug, Clone, Serialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
}

impl Artifact {
    pub fn of(path: &Path) -> CliResult<Self> {
        Ok(Self { path: path.to_path_buf(), sha256: file_sha256(path)? })
    }
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub step: usize,
    pub seed: u64,
    pub config_hash: String,
    pub profile: String,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub extra: serde_json::Value,
}

impl Manifest {
    pub fn write(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

pub fn file_sha256(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// `{command}-{step}-{confighash8}`
pub fn artifact_stem(command: &str, step: usize, hash8: &str) -> String {
    format!("{command}-{step}-{hash8}")
}
