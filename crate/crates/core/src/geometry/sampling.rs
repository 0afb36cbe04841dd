use rand_distr::{Distribution, Normal};

use super::{to_f32, to_f64, LabeledShape};
use crate::rng::stream;

/// Points in every encoder input cloud.
pub const INPUT_CLOUD_POINTS: usize = 300;

/// Query points with ground truth plus the noisy input cloud for one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub query_points: Vec<[f32; 3]>,
    pub gt_occupancy: Vec<bool>,
    /// Nearest-vertex part label; 0 (and meaningless) at exterior points.
    pub gt_part_label: Vec<u16>,
    pub input_cloud: Vec<[f32; 3]>,
    pub class_label: u16,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.query_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.query_points.is_empty()
    }
}

/// Draw `n_query` points uniformly from the bbox grown by `pad` on every
/// side, label them from the analytic oracles, and draw a fresh noisy input
/// cloud. Ground truth is evaluated at the stored (f32-rounded) coordinates.
pub fn sample_batch(
    shape: &LabeledShape,
    n_query: usize,
    pad: f64,
    noise_sigma: f64,
    seed: u64,
) -> SampleBatch {
    let mut rng = stream(seed, &[0x5A3B]);
    let domain = shape.bbox().padded(pad.max(0.0));
    let mut query_points = Vec::with_capacity(n_query);
    let mut gt_occupancy = Vec::with_capacity(n_query);
    let mut gt_part_label = Vec::with_capacity(n_query);
    for _ in 0..n_query {
        let q = to_f32(domain.sample(&mut rng));
        let p = to_f64(q);
        let inside = shape.occupancy(p);
        let label = if inside {
            shape.nearest_vertex_label(p).unwrap_or(0)
        } else {
            0
        };
        query_points.push(q);
        gt_occupancy.push(inside);
        gt_part_label.push(label);
    }
    let input_cloud = noisy_cloud(shape, noise_sigma, &mut rng);
    SampleBatch {
        query_points,
        gt_occupancy,
        gt_part_label,
        input_cloud,
        class_label: shape.class_label(),
    }
}

/// 300 surface samples with iid Gaussian noise on every coordinate.
pub(crate) fn noisy_cloud<R: rand::Rng + ?Sized>(
    shape: &LabeledShape,
    noise_sigma: f64,
    rng: &mut R,
) -> Vec<[f32; 3]> {
    let surface = shape.sample_surface(INPUT_CLOUD_POINTS, rng);
    let noise = (noise_sigma > 0.0).then(|| Normal::new(0.0, noise_sigma).expect("finite sigma"));
    surface
        .into_iter()
        .map(|v| {
            let mut p = v.point;
            if let Some(n) = &noise {
                for c in &mut p {
                    *c += n.sample(rng);
                }
            }
            to_f32(p)
        })
        .collect()
}

/// Input cloud alone, for evaluation passes that need no query points.
pub fn input_cloud(shape: &LabeledShape, noise_sigma: f64, seed: u64) -> Vec<[f32; 3]> {
    let mut rng = stream(seed, &[0xC10D]);
    noisy_cloud(shape, noise_sigma, &mut rng)
}
