use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, Topology};
use super::layers::{Builder, Classifier, Conditioning, Decoder, Encoder};
use super::params::{ParamGroup, ParamId, ParamStore};
use crate::autodiff::{BatchNormMode, Gradients, RunningStats, Scalar, Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Debug, Clone)]
struct Architecture {
    encoder: Encoder,
    occupancy: Option<Decoder>,
    segmentation: Option<Decoder>,
    joint: Option<Decoder>,
    classifier: Classifier,
}

/// Encoder, decoders and classifier with their parameters and batch-norm
/// running statistics.
#[derive(Debug, Clone)]
pub struct Network<T: Scalar = f32> {
    config: ModelConfig,
    params: ParamStore<T>,
    bn: Vec<RunningStats<T>>,
    bn_names: Vec<String>,
    arch: Architecture,
}

/// One forward pass: the tape, lazily bound parameters, and a working copy
/// of the batch-norm statistics.
pub struct Session<'a, T: Scalar = f32> {
    pub tape: Tape<T>,
    params: &'a ParamStore<T>,
    bound: Vec<Option<Var>>,
    trainable: Vec<bool>,
    bn: Vec<RunningStats<T>>,
    mode: BatchNormMode,
}

impl<T: Scalar> Session<'_, T> {
    pub fn mode(&self) -> BatchNormMode {
        self.mode
    }

    /// Tape node for a parameter, created on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id] {
            return v;
        }
        let v = self.tape.leaf(self.params.get(id).clone(), self.trainable[id]);
        self.bound[id] = Some(v);
        v
    }

    pub(crate) fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, stats: usize) -> Result<Var> {
        let mode = self.mode;
        self.tape.batch_norm(x, gamma, beta, mode, &mut self.bn[stats])
    }

    /// Gradients of the trainable parameters used by the pass. Parameters
    /// the loss does not depend on get zeros.
    pub fn param_grads(&self, grads: &Gradients<T>) -> Vec<(ParamId, Tensor<T>)> {
        self.bound
            .iter()
            .enumerate()
            .filter_map(|(id, v)| Some((id, (*v)?)))
            .filter(|&(id, _)| self.trainable[id])
            .map(|(id, v)| {
                let g = grads
                    .get(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(self.params.get(id).shape().to_vec()));
                (id, g)
            })
            .collect()
    }

    /// Batch-norm statistics after this pass (updated in train mode).
    pub fn into_bn_stats(self) -> Vec<RunningStats<T>> {
        self.bn
    }
}

/// Decoder outputs for one pass: `N x 1` occupancy logits and `N x parts`
/// segmentation logits, each present only if requested.
#[derive(Debug, Clone, Copy, Default)]
pub struct Heads {
    pub occupancy: Option<Var>,
    pub segmentation: Option<Var>,
}

impl<T: Scalar> Network<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder {
            params: ParamStore::default(),
            bn: Vec::new(),
            bn_names: Vec::new(),
            momentum: config.bn_momentum,
            eps: config.bn_eps,
            rng: &mut rng,
        };
        let c = &config;
        let encoder = Encoder::new(&mut b, c.encoder_hidden, c.encoder_blocks, c.latent_dim);
        let decoder = |b: &mut Builder<'_, T, ChaCha8Rng>, name: &str, outputs: usize| {
            Decoder::new(b, name, c.latent_dim, c.decoder_hidden, c.decoder_blocks, outputs)
        };
        let (occupancy, segmentation, joint) = match c.topology {
            Topology::Parallel => (
                Some(decoder(&mut b, "occupancy_decoder", 1)),
                Some(decoder(&mut b, "segmentation_decoder", c.n_parts)),
                None,
            ),
            Topology::Joint => (None, None, Some(decoder(&mut b, "joint_decoder", 1 + c.n_parts))),
        };
        let classifier = Classifier::new(&mut b, c.latent_dim, c.classifier_hidden, c.n_classes);
        let Builder {
            params,
            bn,
            bn_names,
            ..
        } = b;
        Ok(Network {
            config,
            params,
            bn,
            bn_names,
            arch: Architecture {
                encoder,
                occupancy,
                segmentation,
                joint,
                classifier,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn bn_stats(&self) -> &[RunningStats<T>] {
        &self.bn
    }

    pub fn bn_names(&self) -> &[String] {
        &self.bn_names
    }

    pub fn set_bn_stats(&mut self, stats: Vec<RunningStats<T>>) -> Result<()> {
        let same = stats.len() == self.bn.len()
            && stats
                .iter()
                .zip(&self.bn)
                .all(|(a, b)| a.mean.len() == b.mean.len() && a.var.len() == b.var.len());
        if !same {
            return Err(Error::invalid("set_bn_stats", "statistics do not match the network"));
        }
        self.bn = stats;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|(_, _, t)| t.len()).sum()
    }

    /// Start a pass. `trainable` selects the parameter groups that receive
    /// gradients; the rest enter the tape as constants.
    pub fn session(&self, mode: BatchNormMode, trainable: impl Fn(ParamGroup) -> bool) -> Session<'_, T> {
        let trainable = (0..self.params.len())
            .map(|id| self.params.group(id).is_some_and(&trainable))
            .collect();
        Session {
            tape: Tape::new(),
            params: &self.params,
            bound: vec![None; self.params.len()],
            trainable,
            bn: self.bn.clone(),
            mode,
        }
    }

    /// Encode a batch of clouds, each with `config.cloud_points` points.
    /// Returns `clouds x latent_dim`.
    pub fn encode(&self, s: &mut Session<'_, T>, clouds: &[&[[f32; 3]]]) -> Result<Var> {
        let per_cloud = self.config.cloud_points;
        if clouds.is_empty() {
            return Err(Error::invalid("encode", "no input clouds"));
        }
        if let Some(bad) = clouds.iter().find(|c| c.len() != per_cloud) {
            return Err(Error::invalid(
                "encode",
                format!("expected {per_cloud} points per cloud, got {}", bad.len()),
            ));
        }
        let flat: Vec<[f32; 3]> = clouds.iter().flat_map(|c| c.iter().copied()).collect();
        let x = s.tape.constant(Tensor::from_points(&flat));
        self.arch.encoder.forward(s, x, per_cloud)
    }

    /// [`Network::encode`] on points already on the tape, `(clouds *
    /// cloud_points) x 3`.
    pub fn encode_var(&self, s: &mut Session<'_, T>, points: Var) -> Result<Var> {
        let per_cloud = self.config.cloud_points;
        let (rows, cols) = s.tape.value(points).dims2()?;
        if cols != 3 || rows == 0 || rows % per_cloud != 0 {
            return Err(Error::invalid(
                "encode",
                format!("expected a multiple of {per_cloud} points, got {rows}x{cols}"),
            ));
        }
        self.arch.encoder.forward(s, points, per_cloud)
    }

    /// Class logits, `shapes x n_classes`.
    pub fn classify(&self, s: &mut Session<'_, T>, z: Var) -> Result<Var> {
        self.arch.classifier.forward(s, z)
    }

    /// Run the decoders needed for the requested heads. `owner[i]` is the
    /// row of `z` that conditions `points[i]`.
    pub fn decode(
        &self,
        s: &mut Session<'_, T>,
        z: Var,
        points: &[[f32; 3]],
        owner: &[usize],
        occupancy: bool,
        segmentation: bool,
    ) -> Result<Heads> {
        if points.is_empty() {
            return Err(Error::invalid("decode", "no query points"));
        }
        let p = s.tape.constant(Tensor::from_points(points));
        self.decode_var(s, z, p, owner, occupancy, segmentation)
    }

    /// [`Network::decode`] on query points already on the tape (`N x 3`).
    pub fn decode_var(
        &self,
        s: &mut Session<'_, T>,
        z: Var,
        p: Var,
        owner: &[usize],
        occupancy: bool,
        segmentation: bool,
    ) -> Result<Heads> {
        let (shapes, width) = s.tape.value(z).dims2()?;
        if width != self.config.latent_dim {
            return Err(Error::ShapeMismatch {
                op: "decode",
                lhs: vec![shapes, width],
                rhs: vec![shapes, self.config.latent_dim],
            });
        }
        let (n, cols) = s.tape.value(p).dims2()?;
        if cols != 3 || n == 0 {
            return Err(Error::invalid("decode", format!("expected N x 3 query points, got {n}x{cols}")));
        }
        if owner.len() != n {
            return Err(Error::invalid("decode", "owner and points differ in length"));
        }
        if owner.iter().any(|&o| o >= shapes) {
            return Err(Error::invalid("decode", "owner index out of range"));
        }
        let cond = Conditioning { z, owner, shapes };
        let mut heads = Heads::default();
        if let Some(joint) = &self.arch.joint {
            if occupancy || segmentation {
                let out = joint.forward(s, p, &cond)?;
                if occupancy {
                    heads.occupancy = Some(s.tape.slice(out, 1, 0, 1)?);
                }
                if segmentation {
                    heads.segmentation = Some(s.tape.slice(out, 1, 1, 1 + self.config.n_parts)?);
                }
            }
            return Ok(heads);
        }
        if occupancy {
            let dec = self.arch.occupancy.as_ref().expect("parallel topology");
            heads.occupancy = Some(dec.forward(s, p, &cond)?);
        }
        if segmentation {
            let dec = self.arch.segmentation.as_ref().expect("parallel topology");
            heads.segmentation = Some(dec.forward(s, p, &cond)?);
        }
        Ok(heads)
    }

    /// `N x 1` occupancy logits.
    pub fn decode_occupancy(
        &self,
        s: &mut Session<'_, T>,
        z: Var,
        points: &[[f32; 3]],
        owner: &[usize],
    ) -> Result<Var> {
        let heads = self.decode(s, z, points, owner, true, false)?;
        Ok(heads.occupancy.expect("requested"))
    }

    /// `N x parts` segmentation logits.
    pub fn decode_segmentation(
        &self,
        s: &mut Session<'_, T>,
        z: Var,
        points: &[[f32; 3]],
        owner: &[usize],
    ) -> Result<Var> {
        let heads = self.decode(s, z, points, owner, false, true)?;
        Ok(heads.segmentation.expect("requested"))
    }

    /// Single pass of the joint decoder, sliced into occupancy and
    /// segmentation logits. Errors on a parallel network.
    pub fn decode_joint(
        &self,
        s: &mut Session<'_, T>,
        z: Var,
        points: &[[f32; 3]],
        owner: &[usize],
    ) -> Result<(Var, Var)> {
        if self.arch.joint.is_none() {
            return Err(Error::invalid(
                "decode_joint",
                format!("network has no joint decoder (expected {} outputs)", 1 + self.config.n_parts),
            ));
        }
        let heads = self.decode(s, z, points, owner, true, true)?;
        Ok((heads.occupancy.expect("requested"), heads.segmentation.expect("requested")))
    }

    /// Eval-mode latent code of a single cloud.
    pub fn infer_latent(&self, cloud: &[[f32; 3]]) -> Result<Tensor<T>> {
        let mut s = self.session(BatchNormMode::Eval, |_| false);
        let z = self.encode(&mut s, &[cloud])?;
        Ok(s.tape.value(z).clone())
    }

    /// Eval-mode class logits of a single cloud.
    pub fn infer_class_logits(&self, cloud: &[[f32; 3]]) -> Result<Vec<f64>> {
        let mut s = self.session(BatchNormMode::Eval, |_| false);
        let z = self.encode(&mut s, &[cloud])?;
        let logits = self.classify(&mut s, z)?;
        Ok(s.tape.value(logits).data().iter().map(|v| v.as_f64()).collect())
    }

    /// Eval-mode decoding of `points` against a latent code, in chunks.
    /// Returns occupancy logits (`N`) and segmentation logits (`N x parts`,
    /// row-major) for the requested heads.
    pub fn infer_points(
        &self,
        latent: &Tensor<T>,
        points: &[[f32; 3]],
        occupancy: bool,
        segmentation: bool,
        chunk: usize,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let chunk = chunk.max(1);
        let mut occ = Vec::new();
        let mut seg = Vec::new();
        for part in points.chunks(chunk) {
            let mut s = self.session(BatchNormMode::Eval, |_| false);
            let z = s.tape.constant(latent.clone());
            let owner = vec![0; part.len()];
            let heads = self.decode(&mut s, z, part, &owner, occupancy, segmentation)?;
            if let Some(v) = heads.occupancy {
                occ.extend(s.tape.value(v).data().iter().map(|v| v.as_f64()));
            }
            if let Some(v) = heads.segmentation {
                seg.extend(s.tape.value(v).data().iter().map(|v| v.as_f64()));
            }
        }
        Ok((occ, seg))
    }

    /// Same network with every tensor converted to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            params: self.params.cast(),
            bn: self.bn.iter().map(|b| b.cast()).collect(),
            bn_names: self.bn_names.clone(),
            arch: self.arch.clone(),
        }
    }
}
