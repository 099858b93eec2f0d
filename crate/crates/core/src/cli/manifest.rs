use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Record of one run. Passing it back through `--config` replays the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Fully resolved settings.
    pub config: serde_json::Value,
    pub seed: u64,
    pub version: String,
    /// RFC 3339, UTC.
    pub timestamp: String,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seed: u64, outputs: Vec<PathBuf>) -> Self {
        RunManifest {
            command: command.to_string(),
            config,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            outputs,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}
