//! Run manifests: the resolved configuration, invocation paths, input
//! hashes, and produced outputs of every command, written as
//! `manifest.json` next to the command's outputs. Contents are fully
//! deterministic (no timestamps) so identical runs produce identical
//! manifests.

use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use super::CliError;

#[derive(Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub crate_version: String,
    pub command: String,
    pub invocation: IndexMap<String, String>,
    pub config: RunConfig,
    pub inputs: IndexMap<String, String>,
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped_videos: Vec<String>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Data(format!("cannot hash {}: {e}", path.display())))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

pub struct ManifestBuilder {
    manifest: Manifest,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        ManifestBuilder {
            manifest: Manifest {
                format_version: 1,
                crate_version: env!("CARGO_PKG_VERSION").to_string(),
                command: command.to_string(),
                invocation: IndexMap::new(),
                config: config.clone(),
                inputs: IndexMap::new(),
                outputs: Vec::new(),
                skipped_videos: Vec::new(),
            },
        }
    }

    pub fn arg(mut self, key: &str, value: impl AsRef<str>) -> Self {
        self.manifest.invocation.insert(key.to_string(), value.as_ref().to_string());
        self
    }

    pub fn input(mut self, path: &Path) -> Result<Self, CliError> {
        let hash = sha256_file(path)?;
        self.manifest.inputs.insert(path.display().to_string(), hash);
        Ok(self)
    }

    pub fn inputs(mut self, paths: &[PathBuf]) -> Result<Self, CliError> {
        for p in paths {
            self = self.input(p)?;
        }
        Ok(self)
    }

    pub fn output(mut self, path: &Path) -> Self {
        self.manifest.outputs.push(path.display().to_string());
        self
    }

    pub fn skipped(mut self, videos: Vec<String>) -> Self {
        self.manifest.skipped_videos = videos;
        self
    }

    pub fn write(self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&self.manifest)
            .expect("manifest serializes");
        std::fs::write(&path, json)
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }
}
