//! Run manifests: enough to re-execute a command identically.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use driveby_core::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub tool_version: String,
    /// SHA-256 of the effective config as JSON.
    pub config_sha256: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub threads: usize,
    /// SHA-256 per input file.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 per output file.
    pub outputs: BTreeMap<String, String>,
    pub wall_time_secs: f64,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Collects inputs and outputs while a command runs.
pub struct Recorder {
    command: String,
    config: serde_json::Value,
    seed: u64,
    started: Instant,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Recorder {
    pub fn new(command: &str, config: &impl Serialize, seed: u64) -> Result<Self> {
        let config = serde_json::to_value(config).map_err(|e| Error::Format(e.to_string()))?;
        Ok(Recorder {
            command: command.to_string(),
            config,
            seed,
            started: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Writes `manifest_<command>.json` into `out_dir`.
    pub fn finish(self, out_dir: &Path) -> Result<PathBuf> {
        let digests = |paths: &[PathBuf]| -> Result<BTreeMap<String, String>> {
            paths
                .iter()
                .filter(|p| p.is_file())
                .map(|p| Ok((p.display().to_string(), sha256_file(p)?)))
                .collect()
        };
        let config_text = serde_json::to_string(&self.config).map_err(|e| Error::Format(e.to_string()))?;
        let manifest = RunManifest {
            command: self.command.clone(),
            args: std::env::args().collect(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: hex::encode(Sha256::digest(config_text.as_bytes())),
            config: self.config,
            seed: self.seed,
            threads: rayon::current_num_threads(),
            inputs: digests(&self.inputs)?,
            outputs: digests(&self.outputs)?,
            wall_time_secs: self.started.elapsed().as_secs_f64(),
        };
        let path = out_dir.join(format!("manifest_{}.json", self.command));
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        Ok(path)
    }
}
