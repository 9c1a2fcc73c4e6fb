//! Per-run manifest: everything needed to reproduce a run exactly.

use serde::Serialize;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seeds: serde_json::Value,
    pub config: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub output_dir: PathBuf,
    pub duration_secs: f64,
}

pub struct ManifestBuilder {
    command: String,
    seeds: serde_json::Value,
    config: serde_json::Value,
    inputs: Vec<PathBuf>,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str) -> Self {
        ManifestBuilder {
            command: command.to_string(),
            seeds: serde_json::Value::Null,
            config: serde_json::Value::Null,
            inputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn seeds(mut self, seeds: serde_json::Value) -> Self {
        self.seeds = seeds;
        self
    }

    pub fn config(mut self, config: serde_json::Value) -> Self {
        self.config = config;
        self
    }

    pub fn input(mut self, path: &Path) -> Self {
        self.inputs.push(path.to_path_buf());
        self
    }

    /// Writes `manifest.json` into the output directory. The manifest
    /// records wall-clock duration and is therefore the one output file that
    /// differs between otherwise identical runs.
    pub fn write(self, out_dir: &Path) -> anyhow::Result<()> {
        let manifest = RunManifest {
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seeds: self.seeds,
            config: self.config,
            inputs: self.inputs,
            output_dir: out_dir.to_path_buf(),
            duration_secs: self.started.elapsed().as_secs_f64(),
        };
        std::fs::create_dir_all(out_dir)?;
        std::fs::write(
            out_dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(())
    }
}
