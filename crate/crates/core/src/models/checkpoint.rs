//! Checkpoint files: an 8-byte little-endian header length, a JSON header
//! with the configuration and tensor table, then the tensors as raw
//! little-endian `f32`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::network::Network;
use crate::autodiff::{RunningStats, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the data section, in bytes.
    pub byte_offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    /// Free-form run metadata, typically the training configuration.
    #[serde(default)]
    pub train: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

/// A network together with the run metadata it was saved with.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub network: Network<f32>,
    pub train: serde_json::Value,
}

fn bn_tensor_names(layer: &str) -> [String; 2] {
    [format!("{layer}.running_mean"), format!("{layer}.running_var")]
}

impl Checkpoint {
    pub fn new(network: Network<f32>, train: serde_json::Value) -> Self {
        Checkpoint { network, train }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let net = &self.network;
        let mut tensors: Vec<(String, Vec<usize>, &[f32])> = net
            .params()
            .iter()
            .map(|(_, name, t)| (name.to_string(), t.shape().to_vec(), t.data()))
            .collect();
        for (name, stats) in net.bn_names().iter().zip(net.bn_stats()) {
            let [m, v] = bn_tensor_names(name);
            tensors.push((m, vec![stats.mean.len()], &stats.mean));
            tensors.push((v, vec![stats.var.len()], &stats.var));
        }
        let mut entries = Vec::with_capacity(tensors.len());
        let mut blob = Vec::new();
        for (name, shape, data) in &tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: shape.clone(),
                byte_offset: blob.len() as u64,
            });
            blob.extend(data.iter().flat_map(|v| v.to_le_bytes()));
        }
        let header = CheckpointHeader {
            model: net.config().clone(),
            train: self.train.clone(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(8 + json.len() + blob.len());
        out.extend((json.len() as u64).to_le_bytes());
        out.extend(json);
        out.extend(blob);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: String| Error::Decode(format!("checkpoint: {msg}"));
        let len_bytes: [u8; 8] = bytes
            .get(..8)
            .ok_or_else(|| bad("truncated header length".into()))?
            .try_into()
            .expect("8 bytes");
        let header_len = usize::try_from(u64::from_le_bytes(len_bytes))
            .map_err(|_| bad("header length overflows".into()))?;
        let json = bytes
            .get(8..8usize.saturating_add(header_len))
            .ok_or_else(|| bad("truncated header".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(json)?;
        let blob = &bytes[8 + header_len..];

        let mut network = Network::<f32>::new(header.model.clone(), 0)?;
        let read = |name: &str, shape: &[usize]| -> Result<Vec<f32>> {
            let entry = header
                .tensors
                .iter()
                .find(|e| e.name == name)
                .ok_or_else(|| bad(format!("missing tensor {name}")))?;
            if entry.shape != shape {
                return Err(bad(format!("tensor {name} has shape {:?}, expected {shape:?}", entry.shape)));
            }
            let n: usize = shape.iter().product();
            let start = usize::try_from(entry.byte_offset).map_err(|_| bad("offset overflows".into()))?;
            let raw = start
                .checked_add(n * 4)
                .and_then(|end| blob.get(start..end))
                .ok_or_else(|| bad(format!("tensor {name} runs past the data section")))?;
            Ok(raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect())
        };

        let known = network.params().len() + 2 * network.bn_names().len();
        if header.tensors.len() != known {
            return Err(bad(format!(
                "{} tensors stored, network has {known}",
                header.tensors.len()
            )));
        }
        for id in 0..network.params().len() {
            let name = network.params().name(id).to_string();
            let shape = network.params().get(id).shape().to_vec();
            let data = read(&name, &shape)?;
            *network.params_mut().get_mut(id) = Tensor::new(shape, data)?;
        }
        let mut stats = Vec::with_capacity(network.bn_names().len());
        for (name, old) in network.bn_names().iter().zip(network.bn_stats()) {
            let [m, v] = bn_tensor_names(name);
            stats.push(RunningStats {
                mean: read(&m, &[old.mean.len()])?,
                var: read(&v, &[old.var.len()])?,
                momentum: old.momentum,
                eps: old.eps,
            });
        }
        network.set_bn_stats(stats)?;
        Ok(Checkpoint {
            network,
            train: header.train,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Topology;

    fn net() -> Network<f32> {
        let mut cfg = ModelConfig::small(3, 2);
        cfg.topology = Topology::Joint;
        cfg.cloud_points = 8;
        Network::new(cfg, 7).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut n = net();
        let mut stats = n.bn_stats().to_vec();
        stats[0].mean[1] = 0.25;
        stats[0].var[0] = 3.5;
        n.set_bn_stats(stats).unwrap();
        let ck = Checkpoint::new(n, serde_json::json!({"lr": 1e-4}));
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.network.params(), ck.network.params());
        assert_eq!(back.network.bn_stats(), ck.network.bn_stats());
        assert_eq!(back.network.config(), ck.network.config());
        assert_eq!(back.train, ck.train);
    }

    #[test]
    fn truncation_is_an_error() {
        let bytes = Checkpoint::new(net(), serde_json::Value::Null).to_bytes().unwrap();
        for cut in [0, 4, 20, bytes.len() - 1] {
            assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
        }
    }
}
