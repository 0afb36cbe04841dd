//! Analytic labeled shapes and their ground-truth oracles.
//!
//! A [`LabeledShape`] is a union of simple primitives. Each primitive carries a
//! part label, and the union surface is sampled into labeled vertices. Interior
//! points take the label of their nearest surface vertex, which partitions the
//! interior into Voronoi cells of the vertex set.

mod family;
mod kdtree;
pub mod occs;
mod primitive;
mod sampling;
mod shape;

pub use family::{make_dataset, Family, FamilySpec};
pub use kdtree::KdTree;
pub use primitive::{Axis, Pose, Primitive, PrimitiveKind};
pub use sampling::{input_cloud, sample_batch, SampleBatch, INPUT_CLOUD_POINTS};
pub use shape::{Aabb, LabeledShape, LabeledVertex, SURFACE_EPS};

pub type Point = [f64; 3];

/// Logistic sigmoid evaluated without overflow for large |x|.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn add(a: Point, b: Point) -> Point {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub(crate) fn scale(a: Point, s: f64) -> Point {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub(crate) fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn cross(a: Point, b: Point) -> Point {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub(crate) fn norm(a: Point) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub(crate) fn dist2(a: Point, b: Point) -> f64 {
    let d = sub(a, b);
    dot(d, d)
}

pub(crate) fn to_f32(p: Point) -> [f32; 3] {
    [p[0] as f32, p[1] as f32, p[2] as f32]
}

pub(crate) fn to_f64(p: [f32; 3]) -> Point {
    [p[0] as f64, p[1] as f64, p[2] as f64]
}
