use std::collections::BTreeMap;

use rand::Rng;

use super::marching_cubes::{marching_cubes, Grid};
use super::mesh::Mesh;
use super::predictor::{Predictor, ShapeModel};
use crate::geometry::{scale, add, Aabb, KdTree, LabeledShape, Point};
use crate::rng::stream;
use crate::{Error, Result};

/// Monte-Carlo IOU of `{p > tau}` against the shape's true interior, over
/// points uniform in `domain`. Both sets empty counts as a perfect match.
pub fn volumetric_iou(
    predictor: &dyn Predictor,
    shape: &LabeledShape,
    domain: Aabb,
    n_samples: usize,
    tau: f64,
    seed: u64,
) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::invalid("volumetric_iou", "n_samples must be at least 1"));
    }
    let mut rng = stream(seed, &[0x1011]);
    let points: Vec<Point> = (0..n_samples).map(|_| domain.sample(&mut rng)).collect();
    let prob = predictor.occupancy_probability(&points)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (p, &q) in points.iter().zip(&prob) {
        let (pred, gt) = (q > tau, shape.occupancy(*p));
        inter += (pred && gt) as usize;
        union += (pred || gt) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Symmetric mean of nearest-neighbour distances between two point sets.
pub fn chamfer_l1_points(a: &[Point], b: &[Point]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyMesh("chamfer distance needs two nonempty sets"));
    }
    let one_way = |from: &[Point], to: &[Point]| {
        let tree = KdTree::new(to.to_vec());
        let total: f64 = from
            .iter()
            .map(|&p| tree.nearest(p).expect("nonempty").1.sqrt())
            .sum();
        total / from.len() as f64
    };
    Ok(0.5 * (one_way(a, b) + one_way(b, a)))
}

/// Chamfer-L1 between `n` area-uniform samples of each mesh. Both meshes
/// are sampled with the same random stream.
pub fn chamfer_l1(a: &Mesh, b: &Mesh, n_samples: usize, seed: u64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyMesh("chamfer_l1"));
    }
    let sa = a.sample_surface(n_samples, &mut stream(seed, &[0xC4A0]))?;
    let sb = b.sample_surface(n_samples, &mut stream(seed, &[0xC4A0]))?;
    chamfer_l1_points(&sa, &sb)
}

/// Mesh of a predictor's level set together with its sampling grid.
#[derive(Debug, Clone)]
pub struct ExtractedMesh {
    pub mesh: Mesh,
    pub resolution: usize,
    pub tau: f64,
    pub domain: Aabb,
    pub cell: Point,
}

/// Sample occupancy probability on a `resolution^3` grid spanning `domain`
/// and triangulate the `tau` level set.
pub fn extract_mesh(predictor: &dyn Predictor, domain: Aabb, resolution: usize, tau: f64) -> Result<ExtractedMesh> {
    if resolution < 8 {
        return Err(Error::invalid("extract_mesh", format!("resolution {resolution} is below 8")));
    }
    let e = domain.extent();
    let step = (resolution - 1) as f64;
    let cell = [e[0] / step, e[1] / step, e[2] / step];
    let dims = [resolution; 3];
    let points = Grid::points(dims, domain.min, cell);
    let values = predictor.occupancy_probability(&points)?;
    let grid = Grid {
        dims,
        origin: domain.min,
        spacing: cell,
        values,
    };
    Ok(ExtractedMesh {
        mesh: marching_cubes(&grid, tau),
        resolution,
        tau,
        domain,
        cell,
    })
}

/// Part label per mesh vertex, queried half a cell inside the surface.
pub fn segment_mesh(predictor: &dyn Predictor, extracted: &ExtractedMesh) -> Result<Vec<u16>> {
    let mesh = &extracted.mesh;
    if mesh.is_empty() {
        return Err(Error::EmptyMesh("segment_mesh"));
    }
    let push = 0.5 * extracted.cell.iter().copied().fold(f64::INFINITY, f64::min);
    let points: Vec<Point> = mesh
        .vertices
        .iter()
        .zip(mesh.vertex_normals())
        .map(|(&v, n)| add(v, scale(n, -push)))
        .collect();
    predictor.part_labels(&points)
}

/// Mean per-part IOU over parts `0..n_parts`. A part with no ground-truth
/// and no predicted points scores 1; predictions outside the part set only
/// enlarge unions.
pub fn part_iou(gt: &[u16], pred: &[u16], n_parts: u16) -> f64 {
    let n = n_parts as usize;
    let (mut inter, mut union) = (vec![0usize; n], vec![0usize; n]);
    for (&g, &p) in gt.iter().zip(pred) {
        let (g, p) = (g as usize, p as usize);
        if g == p && g < n {
            inter[g] += 1;
            union[g] += 1;
            continue;
        }
        if g < n {
            union[g] += 1;
        }
        if p < n {
            union[p] += 1;
        }
    }
    let total: f64 = (0..n)
        .map(|k| if union[k] == 0 { 1.0 } else { inter[k] as f64 / union[k] as f64 })
        .sum();
    total / n as f64
}

/// `n` points uniform in the shape's interior by rejection from its
/// bounding box. Returns fewer points if the interior is too thin to hit.
pub fn sample_interior<R: Rng + ?Sized>(shape: &LabeledShape, n: usize, rng: &mut R) -> Vec<Point> {
    let bbox = shape.bbox();
    let mut out = Vec::with_capacity(n);
    let max_attempts = 1000 * n.max(1);
    for _ in 0..max_attempts {
        if out.len() == n {
            break;
        }
        let p = bbox.sample(rng);
        if shape.occupancy(p) {
            out.push(p);
        }
    }
    out
}

/// Part IOU of one shape on `n_points` interior samples; `None` when no
/// interior point could be drawn.
pub fn shape_part_iou(
    predictor: &dyn Predictor,
    shape: &LabeledShape,
    n_points: usize,
    seed: u64,
) -> Result<Option<f64>> {
    let points = sample_interior(shape, n_points, &mut stream(seed, &[0x9A27]));
    if points.is_empty() {
        return Ok(None);
    }
    let gt = points
        .iter()
        .map(|&p| shape.nearest_vertex_label(p))
        .collect::<Result<Vec<_>>>()?;
    let pred = predictor.part_labels(&points)?;
    Ok(Some(part_iou(&gt, &pred, shape.n_parts())))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PartMiou {
    pub miou: f64,
    pub per_class: BTreeMap<u16, f64>,
    /// Per input shape; `None` for skipped shapes.
    pub per_shape: Vec<Option<f64>>,
    pub skipped: usize,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean shape part-IOU over `shapes`, and per class. `clouds[i]` is the
/// input of shape `i`. Shape `i` draws its points from `seed` and `i`.
pub fn part_miou(
    model: &dyn ShapeModel,
    shapes: &[LabeledShape],
    clouds: &[Vec<[f32; 3]>],
    n_points: usize,
    seed: u64,
) -> Result<PartMiou> {
    let mut per_shape = Vec::with_capacity(shapes.len());
    let mut by_class: BTreeMap<u16, Vec<f64>> = BTreeMap::new();
    for (i, (shape, cloud)) in shapes.iter().zip(clouds).enumerate() {
        let predictor = model.predictor(shape, cloud)?;
        let iou = shape_part_iou(predictor.as_ref(), shape, n_points, crate::rng::derive_seed(seed, &[i as u64]))?;
        if let Some(v) = iou {
            by_class.entry(shape.class_label()).or_default().push(v);
        }
        per_shape.push(iou);
    }
    let scored: Vec<f64> = per_shape.iter().flatten().copied().collect();
    Ok(PartMiou {
        miou: if scored.is_empty() { 0.0 } else { mean(&scored) },
        per_class: by_class.into_iter().map(|(c, v)| (c, mean(&v))).collect(),
        skipped: per_shape.len() - scored.len(),
        per_shape,
    })
}

/// Fraction of shapes whose predicted class equals the label.
pub fn cls_accuracy(model: &dyn ShapeModel, shapes: &[LabeledShape], clouds: &[Vec<[f32; 3]>]) -> Result<f64> {
    if shapes.is_empty() {
        return Err(Error::invalid("cls_accuracy", "no shapes"));
    }
    let mut correct = 0usize;
    for (shape, cloud) in shapes.iter().zip(clouds) {
        correct += (model.predict_class(shape, cloud)? == shape.class_label() as usize) as usize;
    }
    Ok(correct as f64 / shapes.len() as f64)
}
