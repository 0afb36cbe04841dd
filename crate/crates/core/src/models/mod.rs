//! Network architectures.
//!
//! * Encoder: a PointNet-style network whose fully connected layers are
//!   residual blocks. Between blocks, per-point features are max-pooled over
//!   the cloud and the pooled feature is concatenated back onto every point.
//!   The final pool is projected to the latent code.
//! * Decoders: a point projection followed by pre-activation residual blocks
//!   whose batch norms take their scale and shift from the latent code
//!   (conditional batch norm). The occupancy head has one output channel,
//!   the segmentation head one per part, and the joint head both, sliced
//!   apart along the channel axis.
//! * Classifier: two dense layers on the latent code.

mod checkpoint;
mod config;
mod layers;
mod network;
mod params;

pub use checkpoint::{Checkpoint, CheckpointHeader, TensorEntry};
pub use config::{ModelConfig, Topology};
pub use network::{Heads, Network, Session};
pub use params::{ParamGroup, ParamId, ParamStore};
