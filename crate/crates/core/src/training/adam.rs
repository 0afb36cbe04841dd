use serde::{Deserialize, Serialize};

use crate::autodiff::{Scalar, Tensor};
use crate::models::{ParamId, ParamStore};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One ADAM update of a flat parameter slice. `t` is the 1-based step
/// count used for bias correction. Moments are kept in `f64`.
pub fn adam_step<T: Scalar>(
    param: &mut [T],
    grad: &[T],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    cfg: &AdamConfig,
) -> Result<()> {
    let n = param.len();
    if grad.len() != n || m.len() != n || v.len() != n {
        return Err(Error::ShapeMismatch {
            op: "adam_step",
            lhs: vec![n],
            rhs: vec![grad.len(), m.len(), v.len()],
        });
    }
    if t == 0 {
        return Err(Error::invalid("adam_step", "step count starts at 1"));
    }
    let c1 = 1.0 - cfg.beta1.powf(t as f64);
    let c2 = 1.0 - cfg.beta2.powf(t as f64);
    for i in 0..n {
        let g = grad[i].as_f64();
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let step = cfg.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.eps);
        param[i] = T::of(param[i].as_f64() - step);
    }
    Ok(())
}

/// ADAM state for a whole [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new<T: Scalar>(params: &ParamStore<T>, cfg: AdamConfig) -> Self {
        let zeros = |id: ParamId| vec![0.0; params.get(id).len()];
        Adam {
            cfg,
            m: (0..params.len()).map(zeros).collect(),
            v: (0..params.len()).map(zeros).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn lr(&self) -> f64 {
        self.cfg.lr
    }

    /// Change the learning rate; moments are kept.
    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    /// Apply one update. Parameters without a gradient are left alone.
    pub fn step<T: Scalar>(&mut self, params: &mut ParamStore<T>, grads: &[(ParamId, Tensor<T>)]) -> Result<()> {
        self.t += 1;
        for (id, g) in grads {
            let p = params.get_mut(*id);
            if p.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            adam_step(p.data_mut(), g.data(), &mut self.m[*id], &mut self.v[*id], self.t, &self.cfg)?;
        }
        Ok(())
    }
}
