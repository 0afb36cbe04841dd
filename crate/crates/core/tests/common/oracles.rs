//! Brute-force and closed-form oracles, written without reusing the crate's
//! own geometry code paths.

use std::f64::consts::PI;

use occseg::evaluation::Mesh;
use occseg::geometry::{LabeledShape, Point, Primitive, PrimitiveKind};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn d2(a: Point, b: Point) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

pub fn len(a: Point) -> f64 {
    d2(a, [0.0; 3]).sqrt()
}

/// Index of the nearest surface vertex by linear scan, first index on ties.
pub fn linear_nearest(shape: &LabeledShape, p: Point) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, v) in shape.surface_vertices().iter().enumerate() {
        let d = d2(p, v.point);
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

pub fn linear_label(shape: &LabeledShape, p: Point) -> u16 {
    shape.surface_vertices()[linear_nearest(shape, p)].label
}

/// Inside test for one primitive from its parameters alone.
pub fn inside_primitive(prim: &Primitive, p: Point) -> bool {
    let t = prim.pose.translation;
    let d = [p[0] - t[0], p[1] - t[1], p[2] - t[2]];
    let a = prim.pose.axis.index();
    let axial = d[a];
    let radial2: f64 = (0..3).filter(|&i| i != a).map(|i| d[i] * d[i]).sum();
    match prim.kind {
        PrimitiveKind::Sphere { radius } => len(d) < radius,
        PrimitiveKind::Box { half_extents: h } => {
            // Local (x, y, z) is a cyclic shift that puts the main axis last.
            let world = match a {
                0 => [h[2], h[0], h[1]],
                1 => [h[1], h[2], h[0]],
                _ => h,
            };
            (0..3).all(|i| d[i].abs() < world[i])
        }
        PrimitiveKind::Cylinder { radius, half_height } => {
            axial.abs() < half_height && radial2 < radius * radius
        }
        PrimitiveKind::Capsule { radius, half_length } => {
            let c = axial.clamp(-half_length, half_length);
            radial2 + (axial - c).powi(2) < radius * radius
        }
    }
}

pub fn inside_any(shape: &LabeledShape, p: Point) -> bool {
    shape.primitives().iter().any(|prim| inside_primitive(prim, p))
}

pub fn uniform_sphere<R: Rng + ?Sized>(rng: &mut R) -> Point {
    loop {
        let v: Point = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let l = len(v);
        if l > 1e-9 {
            return [v[0] / l, v[1] / l, v[2] / l];
        }
    }
}

pub fn uniform_in_box<R: Rng + ?Sized>(rng: &mut R, min: Point, max: Point) -> Point {
    [
        rng.random_range(min[0]..max[0]),
        rng.random_range(min[1]..max[1]),
        rng.random_range(min[2]..max[2]),
    ]
}

/// IOU of two equal spheres of radius `r` whose centres are `d` apart.
pub fn lens_iou(r: f64, d: f64) -> f64 {
    let ball = 4.0 / 3.0 * PI * r.powi(3);
    let lens = if d >= 2.0 * r {
        0.0
    } else {
        PI * (4.0 * r + d) * (2.0 * r - d).powi(2) / 12.0
    };
    lens / (2.0 * ball - lens)
}

/// Subdivided icosahedron projected to the sphere of `radius` at `center`.
pub fn icosphere(center: Point, radius: f64, levels: usize) -> Mesh {
    let g = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Point> = vec![
        [-1.0, g, 0.0],
        [1.0, g, 0.0],
        [-1.0, -g, 0.0],
        [1.0, -g, 0.0],
        [0.0, -1.0, g],
        [0.0, 1.0, g],
        [0.0, -1.0, -g],
        [0.0, 1.0, -g],
        [g, 0.0, -1.0],
        [g, 0.0, 1.0],
        [-g, 0.0, -1.0],
        [-g, 0.0, 1.0],
    ];
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    let unit = |p: Point| {
        let l = len(p);
        [p[0] / l, p[1] / l, p[2] / l]
    };
    verts.iter_mut().for_each(|v| *v = unit(*v));
    for _ in 0..levels {
        let mut mid = std::collections::HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut m = [0u32; 3];
            for k in 0..3 {
                let (a, b) = (f[k].min(f[(k + 1) % 3]), f[k].max(f[(k + 1) % 3]));
                m[k] = *mid.entry((a, b)).or_insert_with(|| {
                    let (pa, pb) = (verts[a as usize], verts[b as usize]);
                    verts.push(unit([pa[0] + pb[0], pa[1] + pb[1], pa[2] + pb[2]]));
                    (verts.len() - 1) as u32
                });
            }
            next.push([f[0], m[0], m[2]]);
            next.push([f[1], m[1], m[0]]);
            next.push([f[2], m[2], m[1]]);
            next.push(m);
        }
        faces = next;
    }
    let verts = verts
        .into_iter()
        .map(|v| [center[0] + radius * v[0], center[1] + radius * v[1], center[2] + radius * v[2]])
        .collect();
    Mesh::new(verts, faces).expect("valid icosphere")
}
