use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{read_bytes, write_bytes, CliError, CliResult};

pub const MANIFEST_NAME: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the directory holding the manifest.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: Vec<String>,
    /// sha256 of the config document written with the run.
    pub config_sha256: String,
    pub seeds: Vec<u64>,
    pub artifacts: Vec<Artifact>,
}

impl RunManifest {
    pub fn load(dir: &Path) -> CliResult<Self> {
        let path = dir.join(MANIFEST_NAME);
        let bytes = read_bytes(&path)?;
        serde_json::from_slice(&bytes).map_err(|e| CliError::data(format!("bad manifest {}: {e}", path.display())))
    }

    pub fn artifact(&self, path: &str) -> Option<&Artifact> {
        self.artifacts.iter().find(|a| a.path == path)
    }
}

/// Collects the files of one command run and writes them with a manifest.
pub struct OutputSet {
    root: PathBuf,
    artifacts: Vec<Artifact>,
}

impl OutputSet {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
            artifacts: Vec::new(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> CliResult<()> {
        write_bytes(&self.root.join(rel), bytes)?;
        self.artifacts.push(Artifact {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    pub fn finish(mut self, config: &[u8], seeds: Vec<u64>) -> CliResult<RunManifest> {
        self.artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = RunManifest {
            tool: "pda".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: std::env::args().collect(),
            config_sha256: sha256_hex(config),
            seeds,
            artifacts: self.artifacts,
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        write_bytes(&self.root.join(MANIFEST_NAME), text.as_bytes())?;
        Ok(manifest)
    }
}
