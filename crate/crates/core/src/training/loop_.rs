use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;

use super::adam::Adam;
use super::config::TrainConfig;
use super::loss::{total_loss, LossBreakdown};
use crate::autodiff::{BatchNormMode, Var};
use crate::geometry::{sample_batch, LabeledShape, SampleBatch};
use crate::models::{ModelConfig, Network, ParamGroup};
use crate::rng::{derive_seed, stream};
use crate::{Error, Result};

pub const LOSS_CSV_HEADER: &str = "step,L_rec,L_cls,L_seg,L_tot";

const TAG_INIT: u64 = 0x1A17;
const TAG_BATCH: u64 = 0xBA7C;
const TAG_SAMPLE: u64 = 0x5A4E;

/// Starting point of a run.
#[derive(Debug, Clone)]
pub enum Init {
    /// Fresh weights; the topology is taken from the training config.
    Fresh(ModelConfig),
    /// Continue from an existing network, e.g. a loaded checkpoint.
    From(Network<f32>),
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub network: Network<f32>,
    pub history: Vec<LossBreakdown>,
    /// Steps whose batch had no interior query point, so the segmentation
    /// loss was taken as 0.
    pub empty_seg_steps: usize,
}

fn check_dataset(shapes: &[LabeledShape], model: &ModelConfig) -> Result<()> {
    if shapes.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    for (i, s) in shapes.iter().enumerate() {
        if s.class_label() as usize >= model.n_classes || s.n_parts() as usize > model.n_parts {
            return Err(Error::Config(format!(
                "shape {i} (class {}, {} parts) does not fit a model with {} classes and {} parts",
                s.class_label(),
                s.n_parts(),
                model.n_classes,
                model.n_parts
            )));
        }
    }
    Ok(())
}

/// Train for `cfg.steps` steps. Every step draws a fresh set of shapes and
/// fresh query points, so the run is a pure function of the inputs.
/// `progress` is called after each step.
pub fn train(
    shapes: &[LabeledShape],
    init: Init,
    cfg: &TrainConfig,
    mut progress: impl FnMut(usize, &LossBreakdown),
) -> Result<TrainOutput> {
    cfg.validate()?;
    let mut net = match init {
        Init::Fresh(mut model) => {
            if cfg.freeze_encoder {
                return Err(Error::Config("freezing the encoder needs a starting checkpoint".into()));
            }
            model.topology = cfg.topology;
            Network::new(model, derive_seed(cfg.seed, &[TAG_INIT]))?
        }
        Init::From(net) => {
            let needs_decoder = cfg.tasks.rec || cfg.tasks.seg;
            if needs_decoder && net.config().topology != cfg.topology {
                return Err(Error::Config(format!(
                    "checkpoint topology {:?} differs from requested {:?}",
                    net.config().topology,
                    cfg.topology
                )));
            }
            net
        }
    };
    check_dataset(shapes, net.config())?;

    let mut adam = Adam::new(net.params(), cfg.adam);
    let mut history = Vec::with_capacity(cfg.steps);
    let mut empty_seg_steps = 0;
    let per_step = cfg.batch_size.min(shapes.len());
    let frozen = cfg.freeze_encoder;

    for step in 0..cfg.steps {
        if cfg.lr_drop_at == Some(step) {
            adam.set_lr(cfg.adam.lr * cfg.lr_drop_factor);
        }
        let mut rng = stream(cfg.seed, &[TAG_BATCH, step as u64]);
        let chosen = sample(&mut rng, shapes.len(), per_step).into_vec();
        let batches: Vec<SampleBatch> = chosen
            .iter()
            .enumerate()
            .map(|(slot, &i)| {
                let shape = &shapes[i];
                let pad = cfg.pad_fraction * shape.bbox().diagonal();
                let seed = derive_seed(cfg.seed, &[TAG_SAMPLE, step as u64, slot as u64]);
                sample_batch(shape, cfg.n_query, pad, cfg.noise_sigma, seed)
            })
            .collect();

        let (losses, grads, bn, seg_empty) = {
            let mut s = net.session(BatchNormMode::Train, |g| !(frozen && g == ParamGroup::Encoder));
            let clouds: Vec<&[[f32; 3]]> = batches.iter().map(|b| b.input_cloud.as_slice()).collect();
            let z = net.encode(&mut s, &clouds)?;

            let mut terms: Vec<(Var, f64)> = Vec::new();
            let mut cls = None;
            if cfg.tasks.cls {
                let logits = net.classify(&mut s, z)?;
                let labels: Vec<usize> = batches.iter().map(|b| b.class_label as usize).collect();
                let l = s.tape.cross_entropy(logits, &labels, &vec![true; labels.len()])?;
                cls = Some(s.tape.value(l).item() as f64);
                terms.push((l, cfg.weights.cls));
            }

            let (mut rec, mut seg, mut seg_empty) = (None, None, false);
            if cfg.tasks.rec || cfg.tasks.seg {
                let points: Vec<[f32; 3]> = batches.iter().flat_map(|b| b.query_points.iter().copied()).collect();
                let owner: Vec<usize> = batches
                    .iter()
                    .enumerate()
                    .flat_map(|(slot, b)| std::iter::repeat_n(slot, b.len()))
                    .collect();
                let occupancy: Vec<bool> = batches.iter().flat_map(|b| b.gt_occupancy.iter().copied()).collect();
                let heads = net.decode(&mut s, z, &points, &owner, cfg.tasks.rec, cfg.tasks.seg)?;
                if let Some(logits) = heads.occupancy {
                    let l = s.tape.bce_with_logits(logits, &occupancy)?;
                    rec = Some(s.tape.value(l).item() as f64);
                    terms.push((l, 1.0));
                }
                if let Some(logits) = heads.segmentation {
                    let labels: Vec<usize> = batches
                        .iter()
                        .flat_map(|b| b.gt_part_label.iter().map(|&l| l as usize))
                        .collect();
                    let l = s.tape.cross_entropy(logits, &labels, &occupancy)?;
                    seg_empty = !occupancy.iter().any(|&o| o);
                    seg = Some(s.tape.value(l).item() as f64);
                    terms.push((l, cfg.weights.seg));
                }
            }

            let losses = total_loss(rec, cls, seg, cfg.weights);
            if !losses.total.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            let mut total = None;
            for (l, w) in terms {
                let scaled = if w == 1.0 { l } else { s.tape.scale(l, w) };
                total = Some(match total {
                    None => scaled,
                    Some(t) => s.tape.add(t, scaled)?,
                });
            }
            let total = total.expect("at least one task");
            let grads = s.tape.backward(total)?;
            let grads = s.param_grads(&grads);
            (losses, grads, s.into_bn_stats(), seg_empty)
        };
        if grads.iter().any(|(_, g)| !g.all_finite()) {
            return Err(Error::NonFiniteLoss { step });
        }
        net.set_bn_stats(bn)?;
        adam.step(net.params_mut(), &grads)?;
        empty_seg_steps += seg_empty as usize;
        progress(step, &losses);
        history.push(losses);
    }

    Ok(TrainOutput {
        network: net,
        history,
        empty_seg_steps,
    })
}

pub fn write_loss_csv(path: impl AsRef<Path>, history: &[LossBreakdown]) -> Result<()> {
    let mut out = String::from(LOSS_CSV_HEADER);
    out.push('\n');
    for (step, l) in history.iter().enumerate() {
        writeln!(out, "{step},{},{},{},{}", l.rec, l.cls, l.seg, l.total).expect("string write");
    }
    let path = path.as_ref();
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_loss_csv(path: impl AsRef<Path>) -> Result<Vec<LossBreakdown>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: String| Error::Format {
        path: path.to_path_buf(),
        msg,
    };
    let mut lines = text.lines();
    if lines.next() != Some(LOSS_CSV_HEADER) {
        return Err(bad("missing loss header".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let cols: Vec<f64> = line
                .split(',')
                .map(|c| c.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| bad(format!("line {}: {e}", i + 2)))?;
            match cols[..] {
                [_, rec, cls, seg, total] => Ok(LossBreakdown { rec, cls, seg, total }),
                _ => Err(bad(format!("line {}: expected 5 columns", i + 2))),
            }
        })
        .collect()
}
