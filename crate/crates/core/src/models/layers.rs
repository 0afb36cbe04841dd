use rand::Rng;

use super::network::Session;
use super::params::{ParamId, ParamStore};
use crate::autodiff::{RunningStats, Scalar, Var};
use crate::Result;

/// Registers parameters and batch-norm statistics while an architecture is
/// being laid out.
pub(crate) struct Builder<'r, T: Scalar, R: Rng> {
    pub params: ParamStore<T>,
    pub bn: Vec<RunningStats<T>>,
    pub bn_names: Vec<String>,
    pub momentum: f64,
    pub eps: f64,
    pub rng: &'r mut R,
}

impl<T: Scalar, R: Rng> Builder<'_, T, R> {
    pub fn dense(&mut self, name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Dense {
        self.dense_with(name, fan_in, fan_out, bias, 1.0, 0.0)
    }

    fn dense_with(
        &mut self,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        gain: f64,
        bias_value: f64,
    ) -> Dense {
        let weight = self
            .params
            .push_glorot(format!("{name}.weight"), fan_in, fan_out, gain, self.rng);
        let bias = bias.then(|| {
            self.params.push(
                format!("{name}.bias"),
                crate::autodiff::Tensor::full(vec![1, fan_out], T::of(bias_value)),
            )
        });
        Dense { weight, bias }
    }

    /// Conditional batch norm over `features` channels driven by a
    /// `cond_dim` code. Scale starts near one and shift near zero.
    pub fn cond_bn(&mut self, name: &str, cond_dim: usize, features: usize) -> CondBatchNorm {
        let gamma = self.dense_with(&format!("{name}.gamma"), cond_dim, features, true, 0.1, 1.0);
        let beta = self.dense_with(&format!("{name}.beta"), cond_dim, features, true, 0.1, 0.0);
        self.bn.push(RunningStats::new(features, self.momentum, self.eps));
        self.bn_names.push(name.to_string());
        CondBatchNorm {
            gamma,
            beta,
            stats: self.bn.len() - 1,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Dense {
    weight: ParamId,
    bias: Option<ParamId>,
}

impl Dense {
    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let w = s.param(self.weight);
        let y = s.tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = s.param(b);
                s.tape.add_bias(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Fully connected residual block: `shortcut(x) + fc1(relu(fc0(relu(x))))`.
#[derive(Debug, Clone)]
pub(crate) struct ResBlock {
    fc0: Dense,
    fc1: Dense,
    shortcut: Option<Dense>,
}

impl ResBlock {
    pub fn new<T: Scalar, R: Rng>(
        b: &mut Builder<'_, T, R>,
        name: &str,
        size_in: usize,
        size_out: usize,
    ) -> Self {
        let hidden = size_in.min(size_out);
        ResBlock {
            fc0: b.dense(&format!("{name}.fc0"), size_in, hidden, true),
            fc1: b.dense(&format!("{name}.fc1"), hidden, size_out, true),
            shortcut: (size_in != size_out)
                .then(|| b.dense(&format!("{name}.shortcut"), size_in, size_out, false)),
        }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let h = s.tape.relu(x);
        let h = self.fc0.forward(s, h)?;
        let h = s.tape.relu(h);
        let dx = self.fc1.forward(s, h)?;
        let xs = match &self.shortcut {
            Some(sc) => sc.forward(s, x)?,
            None => x,
        };
        s.tape.add(xs, dx)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct CondBatchNorm {
    gamma: Dense,
    beta: Dense,
    stats: usize,
}

/// Latent codes for a decoder pass: `z` holds one row per shape and
/// `owner[i]` names the row used by point `i`.
pub(crate) struct Conditioning<'o> {
    pub z: Var,
    pub owner: &'o [usize],
    pub shapes: usize,
}

impl CondBatchNorm {
    pub fn forward<T: Scalar>(
        &self,
        s: &mut Session<'_, T>,
        x: Var,
        cond: &Conditioning<'_>,
    ) -> Result<Var> {
        let mut gamma = self.gamma.forward(s, cond.z)?;
        let mut beta = self.beta.forward(s, cond.z)?;
        if cond.shapes > 1 {
            gamma = s.tape.gather_rows(gamma, cond.owner)?;
            beta = s.tape.gather_rows(beta, cond.owner)?;
        }
        s.batch_norm(x, gamma, beta, self.stats)
    }
}

/// Pre-activation residual block with conditional batch norm.
#[derive(Debug, Clone)]
pub(crate) struct CondResBlock {
    bn0: CondBatchNorm,
    fc0: Dense,
    bn1: CondBatchNorm,
    fc1: Dense,
}

impl CondResBlock {
    pub fn new<T: Scalar, R: Rng>(
        b: &mut Builder<'_, T, R>,
        name: &str,
        cond_dim: usize,
        size: usize,
    ) -> Self {
        CondResBlock {
            bn0: b.cond_bn(&format!("{name}.bn0"), cond_dim, size),
            fc0: b.dense(&format!("{name}.fc0"), size, size, true),
            bn1: b.cond_bn(&format!("{name}.bn1"), cond_dim, size),
            fc1: b.dense(&format!("{name}.fc1"), size, size, true),
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        s: &mut Session<'_, T>,
        x: Var,
        cond: &Conditioning<'_>,
    ) -> Result<Var> {
        let h = self.bn0.forward(s, x, cond)?;
        let h = s.tape.relu(h);
        let h = self.fc0.forward(s, h)?;
        let h = self.bn1.forward(s, h, cond)?;
        let h = s.tape.relu(h);
        let dx = self.fc1.forward(s, h)?;
        s.tape.add(x, dx)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Encoder {
    fc_pos: Dense,
    blocks: Vec<ResBlock>,
    fc_c: Dense,
}

impl Encoder {
    pub fn new<T: Scalar, R: Rng>(
        b: &mut Builder<'_, T, R>,
        hidden: usize,
        blocks: usize,
        latent: usize,
    ) -> Self {
        Encoder {
            fc_pos: b.dense("encoder.fc_pos", 3, 2 * hidden, true),
            blocks: (0..blocks)
                .map(|i| ResBlock::new(b, &format!("encoder.block{i}"), 2 * hidden, hidden))
                .collect(),
            fc_c: b.dense("encoder.fc_c", hidden, latent, true),
        }
    }

    /// `points` holds `clouds * per_cloud` rows; returns `clouds x latent`.
    pub fn forward<T: Scalar>(
        &self,
        s: &mut Session<'_, T>,
        points: Var,
        per_cloud: usize,
    ) -> Result<Var> {
        let rows = s.tape.value(points).shape()[0];
        let owner: Vec<usize> = (0..rows).map(|i| i / per_cloud).collect();
        let mut net = self.fc_pos.forward(s, points)?;
        for (i, block) in self.blocks.iter().enumerate() {
            if i > 0 {
                let pooled = s.tape.max_pool(net, 0, per_cloud)?;
                let spread = s.tape.gather_rows(pooled, &owner)?;
                net = s.tape.concat(&[net, spread], 1)?;
            }
            net = block.forward(s, net)?;
        }
        let pooled = s.tape.max_pool(net, 0, per_cloud)?;
        let pooled = s.tape.relu(pooled);
        self.fc_c.forward(s, pooled)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Decoder {
    fc_p: Dense,
    blocks: Vec<CondResBlock>,
    bn: CondBatchNorm,
    fc_out: Dense,
}

impl Decoder {
    pub fn new<T: Scalar, R: Rng>(
        b: &mut Builder<'_, T, R>,
        name: &str,
        latent: usize,
        hidden: usize,
        blocks: usize,
        outputs: usize,
    ) -> Self {
        Decoder {
            fc_p: b.dense(&format!("{name}.fc_p"), 3, hidden, true),
            blocks: (0..blocks)
                .map(|i| CondResBlock::new(b, &format!("{name}.block{i}"), latent, hidden))
                .collect(),
            bn: b.cond_bn(&format!("{name}.bn"), latent, hidden),
            fc_out: b.dense(&format!("{name}.fc_out"), hidden, outputs, true),
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        s: &mut Session<'_, T>,
        points: Var,
        cond: &Conditioning<'_>,
    ) -> Result<Var> {
        let mut net = self.fc_p.forward(s, points)?;
        for block in &self.blocks {
            net = block.forward(s, net, cond)?;
        }
        let net = self.bn.forward(s, net, cond)?;
        let net = s.tape.relu(net);
        self.fc_out.forward(s, net)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Classifier {
    fc0: Dense,
    fc1: Dense,
}

impl Classifier {
    pub fn new<T: Scalar, R: Rng>(
        b: &mut Builder<'_, T, R>,
        latent: usize,
        hidden: usize,
        classes: usize,
    ) -> Self {
        Classifier {
            fc0: b.dense("classifier.fc0", latent, hidden, true),
            fc1: b.dense("classifier.fc1", hidden, classes, true),
        }
    }

    pub fn forward<T: Scalar>(&self, s: &mut Session<'_, T>, z: Var) -> Result<Var> {
        let h = self.fc0.forward(s, z)?;
        let h = s.tape.relu(h);
        self.fc1.forward(s, h)
    }
}
