//! The single JSON run configuration shared by every command.

use std::fs;
use std::path::Path;

use egoid::cnn::CnnConfig;
use egoid::flowgrid::FlowGridSpec;
use egoid::ingest::{Protocol, SplitOptions};
use egoid::lpc::LpcConfig;
use egoid::pipeline::{Backend, Fuse, TrainOptions};
use egoid::svm::SvmConfig;
use egoid::synth::PopulationConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub protocol: Protocol,
    pub seed: u64,
    pub target: Option<String>,
    pub train_nontargets: usize,
    pub test_camera: Option<String>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            protocol: Protocol::EvprIdentification,
            seed: 0,
            target: None,
            train_nontargets: 15,
            test_camera: None,
        }
    }
}

impl SplitConfig {
    pub fn options(&self) -> SplitOptions {
        SplitOptions {
            target: self.target.clone(),
            seed: self.seed,
            train_nontargets: self.train_nontargets,
            test_camera: self.test_camera.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub fuse: Fuse,
    /// Video lengths evaluated, seconds.
    pub durations: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            fuse: Fuse::Map,
            durations: vec![4.0, 12.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub flowgrid: FlowGridSpec,
    pub backend: Backend,
    /// Subtract each frame's mean flow before windowing.
    pub stabilize: bool,
    pub lpc: LpcConfig,
    /// `null` uses the back end's defaults (C = 1 for LPC, 10 for raw flow).
    pub svm: Option<SvmConfig>,
    pub cnn: CnnConfig,
    pub split: SplitConfig,
    pub eval: EvalConfig,
    pub synth: PopulationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            flowgrid: FlowGridSpec::default(),
            backend: Backend::LpcSvm,
            stabilize: false,
            lpc: LpcConfig::default(),
            svm: None,
            cnn: CnnConfig::default(),
            split: SplitConfig::default(),
            eval: EvalConfig::default(),
            synth: PopulationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::format(format!("{}: bad config: {e}", path.display())))
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            backend: self.backend,
            stabilize: self.stabilize,
            svm: self.svm,
            cnn: self.cnn,
            lpc: self.lpc,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON serialization.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
