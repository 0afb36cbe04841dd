use serde::{Deserialize, Serialize};

use crate::geometry::INPUT_CLOUD_POINTS;
use crate::{Error, Result};

/// Decoder arrangement for reconstruction plus segmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    /// Separate occupancy and segmentation decoders sharing the code.
    Parallel,
    /// One decoder with `1 + parts` outputs: channel 0 is occupancy.
    Joint,
}

impl std::str::FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parallel" => Ok(Topology::Parallel),
            "joint" => Ok(Topology::Joint),
            _ => Err(Error::Config(format!("unknown topology `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub encoder_hidden: usize,
    pub encoder_blocks: usize,
    pub decoder_hidden: usize,
    pub decoder_blocks: usize,
    pub classifier_hidden: usize,
    pub n_classes: usize,
    pub n_parts: usize,
    pub topology: Topology,
    pub cloud_points: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            latent_dim: 128,
            encoder_hidden: 128,
            encoder_blocks: 2,
            decoder_hidden: 256,
            decoder_blocks: 5,
            classifier_hidden: 128,
            n_classes: 4,
            n_parts: 3,
            topology: Topology::Parallel,
            cloud_points: INPUT_CLOUD_POINTS,
            bn_momentum: 0.9,
            bn_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    /// Reduced widths used for quick experiments and tests.
    pub fn small(n_classes: usize, n_parts: usize) -> Self {
        ModelConfig {
            latent_dim: 32,
            encoder_hidden: 32,
            encoder_blocks: 2,
            decoder_hidden: 32,
            decoder_blocks: 2,
            classifier_hidden: 32,
            n_classes,
            n_parts,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("latent_dim", self.latent_dim),
            ("encoder_hidden", self.encoder_hidden),
            ("encoder_blocks", self.encoder_blocks),
            ("decoder_hidden", self.decoder_hidden),
            ("classifier_hidden", self.classifier_hidden),
            ("n_classes", self.n_classes),
            ("n_parts", self.n_parts),
            ("cloud_points", self.cloud_points),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(0.0..1.0).contains(&self.bn_momentum) || !(self.bn_eps > 0.0) {
            return Err(Error::Config("batch-norm momentum must be in [0, 1) and eps > 0".into()));
        }
        Ok(())
    }
}
