use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub cls: f64,
    pub seg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { cls: 1.0, seg: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.cls >= 0.0 && self.seg >= 0.0 && self.cls.is_finite() && self.seg.is_finite() {
            Ok(())
        } else {
            Err(Error::Config("loss weights must be finite and non-negative".into()))
        }
    }
}

/// Per-step loss terms. Tasks that are not trained contribute 0.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rec: f64,
    pub cls: f64,
    pub seg: f64,
    pub total: f64,
}

pub fn total_loss(rec: Option<f64>, cls: Option<f64>, seg: Option<f64>, w: LossWeights) -> LossBreakdown {
    let (rec, cls, seg) = (rec.unwrap_or(0.0), cls.unwrap_or(0.0), seg.unwrap_or(0.0));
    LossBreakdown {
        rec,
        cls,
        seg,
        total: rec + w.cls * cls + w.seg * seg,
    }
}

fn column(values: &[f64]) -> Tensor<f64> {
    Tensor::new(vec![values.len(), 1], values.to_vec()).expect("sized")
}

fn rows(values: &[f64], n: usize, op: &'static str) -> Result<Tensor<f64>> {
    if n == 0 || !values.len().is_multiple_of(n) {
        return Err(Error::invalid(op, format!("{} logits do not split into {n} rows", values.len())));
    }
    Tensor::new(vec![n, values.len() / n], values.to_vec())
}

/// Mean binary cross entropy of occupancy logits.
pub fn loss_rec(logits: &[f64], gt_occupancy: &[bool]) -> Result<f64> {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(column(logits));
    let l = tape.bce_with_logits(x, gt_occupancy)?;
    Ok(tape.value(l).item())
}

/// Mean cross entropy of class logits (`labels.len()` rows, row-major).
pub fn loss_cls(logits: &[f64], labels: &[usize]) -> Result<f64> {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(rows(logits, labels.len(), "loss_cls")?);
    let mask = vec![true; labels.len()];
    let l = tape.cross_entropy(x, labels, &mask)?;
    Ok(tape.value(l).item())
}

/// Cross entropy of part logits averaged over interior points only.
/// Returns `None` when no point is inside, in which case the loss is 0.
pub fn loss_seg(logits: &[f64], labels: &[usize], gt_occupancy: &[bool]) -> Result<Option<f64>> {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(rows(logits, labels.len(), "loss_seg")?);
    let l = tape.cross_entropy(x, labels, gt_occupancy)?;
    if !gt_occupancy.iter().any(|&m| m) {
        return Ok(None);
    }
    Ok(Some(tape.value(l).item()))
}
