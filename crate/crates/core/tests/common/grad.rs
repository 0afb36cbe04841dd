//! Central finite-difference oracle for tape gradients, plus the checks
//! shared by the gradient tests and the acceptance run.

use occseg::autodiff::{BatchNormMode, RunningStats, Tape, Tensor, Var};
use occseg::models::{ModelConfig, Network, ParamGroup, Session, Topology};
use occseg::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-3;
pub const REL_TOL: f64 = 1e-4;
pub const SEEDS: [u64; 5] = [11, 22, 33, 44, 55];
/// Elements whose perturbation flips a relu or max-pool branch are skipped;
/// at most this fraction of them may be.
pub const MAX_SKIPPED: f64 = 0.25;

/// Result of one evaluation: loss, branch signature, and gradients with
/// respect to each input tensor.
pub struct Eval {
    pub loss: f64,
    pub signature: u64,
    pub grads: Vec<Tensor<f64>>,
}

#[derive(Debug, Clone, Copy)]
pub struct Report {
    /// Worst per-tensor relative error `|a - f| / max(|a|, |f|)`.
    pub worst: f64,
    pub checked: usize,
    /// Elements whose perturbation crossed a relu or max kink.
    pub skipped: usize,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.worst < REL_TOL
            && (self.skipped as f64) <= MAX_SKIPPED * (self.checked + self.skipped) as f64
    }
}

/// Compare analytic gradients against central differences of `f` around
/// `inputs`. Elements whose `+h` or `-h` evaluation lands on a different
/// piece of a piecewise-linear op are excluded: the difference quotient is
/// not a derivative there.
pub fn check(inputs: &[Tensor<f64>], f: impl Fn(&[Tensor<f64>]) -> Result<Eval>) -> Result<Report> {
    let base = f(inputs)?;
    let mut worst = 0.0f64;
    let (mut checked, mut skipped) = (0, 0);
    let mut work = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let mut diff2 = 0.0;
        let mut a2 = 0.0;
        let mut f2 = 0.0;
        for j in 0..input.len() {
            let x = input.data()[j];
            work[i].data_mut()[j] = x + FD_STEP;
            let hi = f(&work)?;
            work[i].data_mut()[j] = x - FD_STEP;
            let lo = f(&work)?;
            work[i].data_mut()[j] = x;
            if hi.signature != base.signature || lo.signature != base.signature {
                skipped += 1;
                continue;
            }
            checked += 1;
            let fd = (hi.loss - lo.loss) / (2.0 * FD_STEP);
            let a = base.grads[i].data()[j];
            diff2 += (a - fd) * (a - fd);
            a2 += a * a;
            f2 += fd * fd;
        }
        let scale = a2.max(f2).sqrt();
        if scale > 1e-12 {
            worst = worst.max(diff2.sqrt() / scale);
        } else {
            worst = worst.max(diff2.sqrt());
        }
    }
    Ok(Report { worst, checked, skipped })
}

pub fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// `sum(out * weights)` with fixed random weights, reducing any output to
/// a scalar with a generic gradient.
pub fn project(tape: &mut Tape<f64>, out: Var, rng_seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let w = random(&mut rng, tape.value(out).shape());
    let w = tape.constant(w);
    let m = tape.mul(out, w)?;
    Ok(tape.sum(m))
}

/// Record `build` on fresh leaves and differentiate.
pub fn eval_tape(
    inputs: &[Tensor<f64>],
    build: &dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> Result<Eval> {
    let mut tape = Tape::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    Ok(Eval {
        loss: tape.value(loss).item(),
        signature: tape.branch_signature(),
        grads: vars
            .iter()
            .zip(inputs)
            .map(|(v, t)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
            .collect(),
    })
}

type Build = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

/// Every primitive op as `(name, input shapes, loss builder)`.
pub fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, Build)> {
    let p = |t: &mut Tape<f64>, v: Var| project(t, v, 7);
    vec![
        ("matmul", vec![vec![4, 3], vec![3, 5]], Box::new(move |t, v| {
            let y = t.matmul(v[0], v[1])?;
            p(t, y)
        })),
        ("add", vec![vec![3, 4], vec![3, 4]], Box::new(move |t, v| {
            let y = t.add(v[0], v[1])?;
            p(t, y)
        })),
        ("mul", vec![vec![3, 4], vec![3, 4]], Box::new(move |t, v| {
            let y = t.mul(v[0], v[1])?;
            p(t, y)
        })),
        ("add_bias", vec![vec![5, 3], vec![1, 3]], Box::new(move |t, v| {
            let y = t.add_bias(v[0], v[1])?;
            p(t, y)
        })),
        ("scale", vec![vec![3, 3]], Box::new(move |t, v| {
            let y = t.scale(v[0], -2.5);
            p(t, y)
        })),
        ("relu", vec![vec![6, 4]], Box::new(move |t, v| {
            let y = t.relu(v[0]);
            p(t, y)
        })),
        ("sigmoid", vec![vec![6, 4]], Box::new(move |t, v| {
            let y = t.sigmoid(v[0]);
            p(t, y)
        })),
        ("softmax_rows", vec![vec![4, 5]], Box::new(move |t, v| {
            let y = t.softmax(v[0], 1)?;
            p(t, y)
        })),
        ("softmax_cols", vec![vec![4, 5]], Box::new(move |t, v| {
            let y = t.softmax(v[0], 0)?;
            p(t, y)
        })),
        ("max_pool", vec![vec![8, 3]], Box::new(move |t, v| {
            let y = t.max_pool(v[0], 0, 4)?;
            p(t, y)
        })),
        ("mean_rows", vec![vec![4, 3]], Box::new(move |t, v| {
            let y = t.mean(v[0], 0)?;
            p(t, y)
        })),
        ("mean_cols", vec![vec![4, 3]], Box::new(move |t, v| {
            let y = t.mean(v[0], 1)?;
            p(t, y)
        })),
        ("sum", vec![vec![4, 3]], Box::new(move |t, v| {
            let y = t.mul(v[0], v[0])?;
            Ok(t.sum(y))
        })),
        ("concat_cols", vec![vec![3, 2], vec![3, 4]], Box::new(move |t, v| {
            let y = t.concat(&[v[0], v[1]], 1)?;
            p(t, y)
        })),
        ("concat_rows", vec![vec![2, 3], vec![4, 3]], Box::new(move |t, v| {
            let y = t.concat(&[v[0], v[1]], 0)?;
            p(t, y)
        })),
        ("slice_cols", vec![vec![3, 5]], Box::new(move |t, v| {
            let y = t.slice(v[0], 1, 1, 4)?;
            p(t, y)
        })),
        ("slice_rows", vec![vec![5, 3]], Box::new(move |t, v| {
            let y = t.slice(v[0], 0, 2, 5)?;
            p(t, y)
        })),
        ("gather_rows", vec![vec![3, 4]], Box::new(move |t, v| {
            let y = t.gather_rows(v[0], &[2, 0, 2, 1, 2])?;
            p(t, y)
        })),
        ("batch_norm_train", vec![vec![6, 3], vec![1, 3], vec![1, 3]], Box::new(move |t, v| {
            let mut stats = RunningStats::new(3, 0.9, 1e-5);
            let y = t.batch_norm(v[0], v[1], v[2], BatchNormMode::Train, &mut stats)?;
            p(t, y)
        })),
        ("batch_norm_train_per_row", vec![vec![6, 3], vec![6, 3], vec![6, 3]], Box::new(move |t, v| {
            let mut stats = RunningStats::new(3, 0.9, 1e-5);
            let y = t.batch_norm(v[0], v[1], v[2], BatchNormMode::Train, &mut stats)?;
            p(t, y)
        })),
        ("batch_norm_eval", vec![vec![6, 3], vec![6, 3], vec![1, 3]], Box::new(move |t, v| {
            let mut stats = RunningStats::new(3, 0.9, 1e-5);
            stats.mean = vec![0.2, -0.1, 0.05];
            stats.var = vec![0.5, 2.0, 1.3];
            let y = t.batch_norm(v[0], v[1], v[2], BatchNormMode::Eval, &mut stats)?;
            p(t, y)
        })),
        ("bce_with_logits", vec![vec![7, 1]], Box::new(move |t, v| {
            t.bce_with_logits(v[0], &[true, false, false, true, true, false, true])
        })),
        ("cross_entropy_masked", vec![vec![5, 3]], Box::new(move |t, v| {
            t.cross_entropy(v[0], &[0, 2, 1, 1, 0], &[true, false, true, true, false])
        })),
    ]
}

pub fn check_op(name: &str, seed: u64) -> Result<Report> {
    let (_, shapes, build) = op_cases().into_iter().find(|c| c.0 == name).expect("known op");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| random(&mut rng, s)).collect();
    if name.starts_with("batch_norm") {
        // Keep batch variance away from zero and gamma near one.
        for v in inputs[0].data_mut() {
            *v *= 2.0;
        }
    }
    check(&inputs, |x| eval_tape(x, &build))
}

/// Sub-network under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Encoder,
    ParallelDecoders,
    JointDecoder,
    Classifier,
    /// Encoder, decoders and classifier with the training loss.
    Full(Topology),
}

impl Part {
    pub const ALL: [Part; 6] = [
        Part::Encoder,
        Part::ParallelDecoders,
        Part::JointDecoder,
        Part::Classifier,
        Part::Full(Topology::Parallel),
        Part::Full(Topology::Joint),
    ];
}

pub fn tiny_config(topology: Topology) -> ModelConfig {
    ModelConfig {
        latent_dim: 4,
        encoder_hidden: 4,
        encoder_blocks: 2,
        decoder_hidden: 5,
        decoder_blocks: 1,
        classifier_hidden: 4,
        n_classes: 3,
        n_parts: 2,
        topology,
        cloud_points: 6,
        ..Default::default()
    }
}

const SHAPES: usize = 2;
const QUERIES: usize = 5;

fn owner() -> Vec<usize> {
    (0..SHAPES * QUERIES).map(|i| i / QUERIES).collect()
}

fn occupancy() -> Vec<bool> {
    (0..SHAPES * QUERIES).map(|i| i % 3 != 0).collect()
}

fn part_labels() -> Vec<usize> {
    (0..SHAPES * QUERIES).map(|i| (i / 2) % 2).collect()
}

fn in_group(part: Part, g: ParamGroup) -> bool {
    match part {
        Part::Encoder => g == ParamGroup::Encoder,
        Part::ParallelDecoders => matches!(g, ParamGroup::OccupancyDecoder | ParamGroup::SegmentationDecoder),
        Part::JointDecoder => g == ParamGroup::JointDecoder,
        Part::Classifier => g == ParamGroup::Classifier,
        Part::Full(_) => true,
    }
}

fn head_loss(
    net: &Network<f64>,
    s: &mut Session<'_, f64>,
    z: Var,
    points: Var,
) -> Result<Var> {
    let heads = net.decode_var(s, z, points, &owner(), true, true)?;
    let rec = s.tape.bce_with_logits(heads.occupancy.expect("occ"), &occupancy())?;
    let seg = s.tape.cross_entropy(heads.segmentation.expect("seg"), &part_labels(), &occupancy())?;
    s.tape.add(rec, seg)
}

/// Gradient check of one sub-network in train mode, with respect to its
/// parameters and its inputs (cloud points, latent codes, query points).
pub fn check_model(part: Part, seed: u64) -> Result<Report> {
    let net = Network::<f64>::new(tiny_config(part_topology(part)), seed)?;
    check_network(part, &net, seed, true)
}

pub fn part_topology(part: Part) -> Topology {
    match part {
        Part::JointDecoder | Part::Full(Topology::Joint) => Topology::Joint,
        _ => Topology::Parallel,
    }
}

/// [`check_model`] on a given network, optionally jittering its parameters.
pub fn check_network(part: Part, net: &Network<f64>, seed: u64, perturb: bool) -> Result<Report> {
    let cfg = net.config().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xF00D);
    let ids: Vec<usize> = (0..net.params().len())
        .filter(|&id| net.params().group(id).is_some_and(|g| in_group(part, g)))
        .collect();
    let mut inputs: Vec<Tensor<f64>> = ids.iter().map(|&id| net.params().get(id).clone()).collect();
    // Perturb the init so biases and CBN scales are not all at their
    // special values.
    if perturb {
        for t in &mut inputs {
            for v in t.data_mut() {
                *v += rng.random_range(-0.2..0.2);
            }
        }
    }
    let n_params = inputs.len();
    let cloud = random(&mut rng, &[SHAPES * cfg.cloud_points, 3]);
    let z = random(&mut rng, &[SHAPES, cfg.latent_dim]);
    let queries = random(&mut rng, &[SHAPES * QUERIES, 3]);
    match part {
        Part::Encoder | Part::Full(_) => inputs.push(cloud),
        Part::Classifier => inputs.push(z),
        Part::ParallelDecoders | Part::JointDecoder => {
            inputs.push(z);
            inputs.push(queries.clone());
        }
    }

    check(&inputs, |x| {
        let mut net = net.clone();
        for (k, &id) in ids.iter().enumerate() {
            *net.params_mut().get_mut(id) = x[k].clone();
        }
        let mut s = net.session(BatchNormMode::Train, |g| in_group(part, g));
        let extra: Vec<Var> = x[n_params..].iter().map(|t| s.tape.param(t.clone())).collect();
        let loss = match part {
            Part::Encoder => {
                let z = net.encode_var(&mut s, extra[0])?;
                project(&mut s.tape, z, seed)?
            }
            Part::Classifier => {
                let logits = net.classify(&mut s, extra[0])?;
                s.tape.cross_entropy(logits, &[2, 0], &[true, true])?
            }
            Part::ParallelDecoders | Part::JointDecoder => head_loss(&net, &mut s, extra[0], extra[1])?,
            Part::Full(_) => {
                let z = net.encode_var(&mut s, extra[0])?;
                let logits = net.classify(&mut s, z)?;
                let cls = s.tape.cross_entropy(logits, &[2, 0], &[true, true])?;
                let q = s.tape.constant(queries.clone());
                let heads = head_loss(&net, &mut s, z, q)?;
                s.tape.add(cls, heads)?
            }
        };
        let grads = s.tape.backward(loss)?;
        let by_id = s.param_grads(&grads);
        let mut out: Vec<Tensor<f64>> = ids
            .iter()
            .map(|id| {
                by_id
                    .iter()
                    .find(|(i, _)| i == id)
                    .map(|(_, g)| g.clone())
                    .unwrap_or_else(|| Tensor::zeros(net.params().get(*id).shape().to_vec()))
            })
            .collect();
        out.extend(extra.iter().map(|v| {
            grads
                .get(*v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(s.tape.value(*v).shape().to_vec()))
        }));
        Ok(Eval {
            loss: s.tape.value(loss).item(),
            signature: s.tape.branch_signature(),
            grads: out,
        })
    })
}
