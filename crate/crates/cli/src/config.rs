//! The merged run configuration: defaults, then the JSON config file, then
//! command-line flags.

use std::path::Path;

use occseg::dataset::GenConfig;
use occseg::evaluation::EvalConfig;
use occseg::models::ModelConfig;
use occseg::training::TrainConfig;
use occseg::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconstructConfig {
    pub resolution: usize,
    pub tau: f64,
    pub seed: u64,
    pub noise_sigma: f64,
    pub pad_fraction: f64,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        ReconstructConfig {
            resolution: 64,
            tau: 0.2,
            seed: 0,
            noise_sigma: 0.05,
            pad_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub gen: GenConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub reconstruct: ReconstructConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Overwrite `slot` when a flag was given.
pub fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}
