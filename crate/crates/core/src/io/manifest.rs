use std::path::Path;

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use super::config::render_config;
use super::files::{read_json, write_json};
use crate::error::Result;
use crate::experiment::LoopConfig;

/// Provenance of one CLI run. Timestamps make the manifest itself differ
/// between reruns; the data files it lists do not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub program: String,
    pub version: String,
    pub command: String,
    /// Full configuration in the config-file format.
    pub config: String,
    pub master_seed: u64,
    pub trajectories: Option<usize>,
    pub started_utc: String,
    pub finished_utc: Option<String>,
    /// Data files written by the run, relative to the output directory.
    pub outputs: Vec<String>,
    /// Headline numbers of the run.
    pub summary: Vec<(String, Option<f64>)>,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn start(command: &str, config: &LoopConfig, master_seed: u64, trajectories: Option<usize>) -> Self {
        Self {
            program: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config: render_config(config),
            master_seed,
            trajectories,
            started_utc: now(),
            finished_utc: None,
            outputs: Vec::new(),
            summary: Vec::new(),
        }
    }

    pub fn output(&mut self, name: &str) {
        self.outputs.push(name.to_string());
    }

    pub fn finish(&mut self, path: &Path) -> Result<()> {
        self.finished_utc = Some(now());
        write_json(path, self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        read_json(path)
    }
}
