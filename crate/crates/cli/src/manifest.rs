//! Record of how a set of outputs was produced.

use std::fs;
use std::path::Path;

use anyhow::Context;
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    pub config: serde_json::Value,
    /// Kept here rather than in the result files so reruns stay
    /// byte-identical.
    pub wall_time_secs: f64,
}

impl RunManifest {
    pub fn new(subcommand: &str, seed: Option<u64>) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            inputs: Vec::new(),
            config: serde_json::Value::Null,
            wall_time_secs: 0.0,
        }
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(dir.join("manifest.json"), text + "\n").context("writing manifest.json")
    }
}
