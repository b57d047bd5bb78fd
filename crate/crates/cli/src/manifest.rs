//! Run manifest: every file the workflow writes, with its digest.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use chanest_core::dataset::file_digest;

pub const FILE_NAME: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub sha256: String,
    pub command: String,
    pub config_hash: String,
    pub created_unix: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    /// Hash of the resolved configuration of the latest command.
    pub config_hash: String,
    /// Paths relative to the run directory.
    #[serde(default)]
    pub files: BTreeMap<String, FileEntry>,
    /// Autoencoder weight fingerprints by mode.
    #[serde(default)]
    pub fingerprints: BTreeMap<String, String>,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn load_or_new(dir: &Path) -> Result<Self> {
        let path = dir.join(FILE_NAME);
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Hashes `rel` (relative to `dir`) and records it.
    pub fn record(&mut self, dir: &Path, rel: &str, command: &str) -> Result<()> {
        let sha256 = file_digest(&dir.join(rel))?;
        let created_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        self.files.insert(
            rel.to_string(),
            FileEntry {
                sha256,
                command: command.to_string(),
                config_hash: self.config_hash.clone(),
                created_unix,
            },
        );
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(FILE_NAME);
        std::fs::write(&path, toml::to_string(self)?).with_context(|| format!("writing {}", path.display()))
    }
}
