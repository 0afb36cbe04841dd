use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sigmoid, KdTree, Point, Primitive};
use crate::{Error, Result};

/// Surface vertices must lie this close to the union surface.
pub const SURFACE_EPS: f64 = 1e-4;

const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Point,
    pub max: Point,
}

impl Aabb {
    pub fn padded(&self, pad: f64) -> Aabb {
        Aabb {
            min: [self.min[0] - pad, self.min[1] - pad, self.min[2] - pad],
            max: [self.max[0] + pad, self.max[1] + pad, self.max[2] + pad],
        }
    }

    pub fn extent(&self) -> Point {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    pub fn diagonal(&self) -> f64 {
        super::norm(self.extent())
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        e[0] * e[1] * e[2]
    }

    pub fn contains(&self, p: Point) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        let mut p = [0.0; 3];
        for a in 0..3 {
            p[a] = self.min[a] + rng.random::<f64>() * (self.max[a] - self.min[a]);
        }
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledVertex {
    pub point: Point,
    pub label: u16,
}

/// Union of primitives with labeled surface vertices and a class label.
#[derive(Debug, Clone)]
pub struct LabeledShape {
    class_label: u16,
    n_parts: u16,
    primitives: Vec<Primitive>,
    vertices: Vec<LabeledVertex>,
    bbox: Aabb,
    index: KdTree,
}

impl LabeledShape {
    /// Build a shape and sample `n_vertices` labeled points on the union
    /// surface. Samples drawn on one primitive but buried inside another are
    /// rejected.
    pub fn generate<R: Rng + ?Sized>(
        class_label: u16,
        n_parts: u16,
        primitives: Vec<Primitive>,
        n_vertices: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if primitives.is_empty() {
            return Err(Error::MalformedShape("no primitives".into()));
        }
        let mut shape = Self::from_parts(class_label, n_parts, primitives, Vec::new())?;
        let vertices: Vec<LabeledVertex> = shape
            .sample_surface(n_vertices, rng)
            .into_iter()
            .collect();
        shape.set_vertices(vertices);
        shape.validate()?;
        Ok(shape)
    }

    /// Assemble a shape from explicit parts without sampling. The result may
    /// violate the surface invariants; see [`LabeledShape::validate`].
    pub fn from_parts(
        class_label: u16,
        n_parts: u16,
        primitives: Vec<Primitive>,
        vertices: Vec<LabeledVertex>,
    ) -> Result<Self> {
        if primitives.is_empty() {
            return Err(Error::MalformedShape("no primitives".into()));
        }
        if let Some(p) = primitives.iter().find(|p| p.part_label >= n_parts) {
            return Err(Error::MalformedShape(format!(
                "part label {} out of range for {n_parts} parts",
                p.part_label
            )));
        }
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for p in &primitives {
            let (lo, hi) = p.bounds();
            for a in 0..3 {
                min[a] = min[a].min(lo[a]);
                max[a] = max[a].max(hi[a]);
            }
        }
        let mut shape = LabeledShape {
            class_label,
            n_parts,
            primitives,
            vertices: Vec::new(),
            bbox: Aabb { min, max },
            index: KdTree::new(Vec::new()),
        };
        shape.set_vertices(vertices);
        Ok(shape)
    }

    fn set_vertices(&mut self, vertices: Vec<LabeledVertex>) {
        self.index = KdTree::new(vertices.iter().map(|v| v.point).collect());
        self.vertices = vertices;
    }

    /// Check the vertex invariants: on the surface, inside the bbox, and every
    /// part that owns a primitive owns at least one vertex.
    pub fn validate(&self) -> Result<()> {
        if self.vertices.is_empty() {
            return Err(Error::MalformedShape("no surface vertices".into()));
        }
        for v in &self.vertices {
            let s = self.sdf(v.point);
            if s.abs() > SURFACE_EPS {
                return Err(Error::MalformedShape(format!(
                    "vertex {:?} is {s} from the surface",
                    v.point
                )));
            }
            if !self.bbox.padded(SURFACE_EPS).contains(v.point) {
                return Err(Error::MalformedShape(format!(
                    "vertex {:?} outside bbox",
                    v.point
                )));
            }
        }
        for p in &self.primitives {
            if !self.vertices.iter().any(|v| v.label == p.part_label) {
                return Err(Error::MalformedShape(format!(
                    "part {} has no surface vertex",
                    p.part_label
                )));
            }
        }
        Ok(())
    }

    pub fn class_label(&self) -> u16 {
        self.class_label
    }

    pub fn n_parts(&self) -> u16 {
        self.n_parts
    }

    pub fn primitives(&self) -> &[Primitive] {
        &self.primitives
    }

    pub fn surface_vertices(&self) -> &[LabeledVertex] {
        &self.vertices
    }

    pub fn bbox(&self) -> Aabb {
        self.bbox
    }

    /// Parts that own at least one primitive.
    pub fn present_parts(&self) -> Vec<u16> {
        let mut parts: Vec<u16> = self.primitives.iter().map(|p| p.part_label).collect();
        parts.sort_unstable();
        parts.dedup();
        parts
    }

    /// Union signed distance: the minimum over member distances. The sign is
    /// exact; outside the union the magnitude is a lower bound.
    pub fn sdf(&self, p: Point) -> f64 {
        self.primitives
            .iter()
            .map(|prim| prim.sdf(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Inside test, `sdf < 0`. Equivalent to thresholding `sigmoid(-sdf)` at 0.5.
    pub fn occupancy(&self, p: Point) -> bool {
        self.sdf(p) < 0.0
    }

    /// `sigmoid(-sdf)`, the soft occupancy whose 0.5 level set is the surface.
    pub fn occupancy_probability(&self, p: Point) -> f64 {
        sigmoid(-self.sdf(p))
    }

    /// Central finite difference of the union SDF.
    pub fn sdf_gradient(&self, p: Point) -> Point {
        let mut g = [0.0; 3];
        for a in 0..3 {
            let mut hi = p;
            let mut lo = p;
            hi[a] += FD_STEP;
            lo[a] -= FD_STEP;
            g[a] = (self.sdf(hi) - self.sdf(lo)) / (2.0 * FD_STEP);
        }
        g
    }

    /// Label of the nearest surface vertex (lowest index on ties).
    pub fn nearest_vertex_label(&self, p: Point) -> Result<u16> {
        self.nearest_vertex(p).map(|i| self.vertices[i].label)
    }

    pub fn nearest_vertex(&self, p: Point) -> Result<usize> {
        self.index
            .nearest(p)
            .map(|(i, _)| i)
            .ok_or_else(|| Error::MalformedShape("no surface vertices".into()))
    }

    /// Uniform labeled samples on the union surface.
    pub fn sample_surface<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<LabeledVertex> {
        let areas: Vec<f64> = self.primitives.iter().map(|p| p.surface_area()).collect();
        let total: f64 = areas.iter().sum();
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let mut pick = rng.random::<f64>() * total;
            let mut which = areas.len() - 1;
            for (i, a) in areas.iter().enumerate() {
                if pick < *a {
                    which = i;
                    break;
                }
                pick -= a;
            }
            let prim = &self.primitives[which];
            let point = prim.sample_surface(rng);
            let buried = self
                .primitives
                .iter()
                .enumerate()
                .any(|(j, other)| j != which && other.sdf(point) < 0.0);
            if !buried {
                out.push(LabeledVertex {
                    point,
                    label: prim.part_label,
                });
            }
        }
        out
    }
}
