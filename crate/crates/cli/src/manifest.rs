//! Run manifest, written next to the artifacts of every run.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub index: usize,
    pub label: String,
    pub wall_time_s: f64,
    pub ok: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub core_version: String,
    pub command: String,
    pub config_path: Option<String>,
    /// SHA-256 of the raw config text.
    pub config_sha256: Option<String>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub units: Option<String>,
    pub wall_time_s: f64,
    pub exit_code: i32,
    pub error: Option<String>,
    pub outputs: Vec<String>,
    pub tasks: Vec<TaskRecord>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            core_version: tdscha_core::VERSION.into(),
            command: command.into(),
            config_path: None,
            config_sha256: None,
            seed: None,
            workers: None,
            units: None,
            wall_time_s: 0.0,
            exit_code: 0,
            error: None,
            outputs: Vec::new(),
            tasks: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(dir.join("manifest.json"), text)
    }
}

pub fn sha256_hex(text: &str) -> String {
    format!("{:x}", Sha256::digest(text.as_bytes()))
}
