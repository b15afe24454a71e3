//! Provenance record written next to every run's outputs.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_path: String,
    /// Git blob hash of the config file.
    pub config_hash: String,
    pub controller: String,
    pub seed: u64,
    pub outputs: Vec<String>,
    /// Extra settings applied on top of the file, e.g. a sweep value.
    pub overrides: Vec<String>,
    pub status: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub tool_version: String,
}

pub fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

impl RunManifest {
    pub fn new(config_path: &Path, config_hash: &str, controller: &str, seed: u64) -> Self {
        Self {
            config_path: std::fs::canonicalize(config_path)
                .unwrap_or_else(|_| config_path.to_path_buf())
                .display()
                .to_string(),
            config_hash: config_hash.to_string(),
            controller: controller.to_string(),
            seed,
            outputs: Vec::new(),
            overrides: Vec::new(),
            status: String::new(),
            started_unix_ms: now_ms(),
            finished_unix_ms: 0,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    /// Manifest path belonging to a primary output file.
    pub fn path_for(output: &Path) -> PathBuf {
        let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".manifest.toml");
        output.with_file_name(name)
    }

    pub fn write(&mut self, path: &Path) -> std::io::Result<()> {
        self.finished_unix_ms = now_ms();
        let text = toml::to_string(self).map_err(std::io::Error::other)?;
        std::fs::write(path, text)
    }

    pub fn read(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(std::io::Error::other)
    }
}
