//! JSON report envelope. Reports hold no timestamps, so rerunning a command
//! with the same config and inputs reproduces them byte for byte.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{sha256_hex, RunConfig};
use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub command: String,
    pub tool_version: String,
    /// The exact configuration the command ran with.
    pub config: serde_json::Value,
    pub config_sha256: String,
    /// SHA-256 of each input file, keyed by role.
    pub inputs: BTreeMap<String, String>,
    pub result: serde_json::Value,
}

impl Report {
    pub fn new(command: &str, config: &RunConfig, result: impl Serialize) -> Self {
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.to_json(),
            config_sha256: config.hash(),
            inputs: BTreeMap::new(),
            result: serde_json::to_value(result).expect("report result serializes"),
        }
    }

    /// Records the hash of an input file.
    pub fn input(mut self, role: &str, path: &Path) -> Result<Self, CliError> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        self.inputs.insert(role.to_string(), sha256_hex(&bytes));
        Ok(self)
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        egoid::write_atomic(path, text.as_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::format(format!("{}: not a report: {e}", path.display())))
    }
}
