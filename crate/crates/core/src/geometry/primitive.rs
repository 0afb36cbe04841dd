use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::{norm, Point};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    // Cyclic permutation taking this axis to local z.
    #[inline]
    fn to_local(self, q: Point) -> Point {
        match self {
            Axis::X => [q[1], q[2], q[0]],
            Axis::Y => [q[2], q[0], q[1]],
            Axis::Z => q,
        }
    }

    #[inline]
    fn to_world(self, l: Point) -> Point {
        match self {
            Axis::X => [l[2], l[0], l[1]],
            Axis::Y => [l[1], l[2], l[0]],
            Axis::Z => l,
        }
    }
}

/// Translation plus an axis-aligned orientation. The primitive's main axis
/// (cylinder/capsule length, box local z) points along `axis`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub translation: Point,
    pub axis: Axis,
}

impl Pose {
    pub fn at(translation: Point) -> Self {
        Pose {
            translation,
            axis: Axis::Z,
        }
    }

    pub fn along(translation: Point, axis: Axis) -> Self {
        Pose { translation, axis }
    }
}

/// Size parameters, all in the primitive's local frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PrimitiveKind {
    Sphere { radius: f64 },
    Box { half_extents: Point },
    Cylinder { radius: f64, half_height: f64 },
    Capsule { radius: f64, half_length: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub kind: PrimitiveKind,
    pub pose: Pose,
    pub part_label: u16,
}

impl Primitive {
    pub fn new(kind: PrimitiveKind, pose: Pose, part_label: u16) -> Result<Self> {
        let sizes: &[f64] = match &kind {
            PrimitiveKind::Sphere { radius } => &[*radius],
            PrimitiveKind::Box { half_extents } => half_extents,
            PrimitiveKind::Cylinder {
                radius,
                half_height,
            } => &[*radius, *half_height],
            PrimitiveKind::Capsule {
                radius,
                half_length,
            } => &[*radius, *half_length],
        };
        if sizes.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::MalformedShape(format!(
                "primitive sizes must be strictly positive: {kind:?}"
            )));
        }
        Ok(Primitive {
            kind,
            pose,
            part_label,
        })
    }

    pub fn sphere(center: Point, radius: f64, part_label: u16) -> Result<Self> {
        Self::new(PrimitiveKind::Sphere { radius }, Pose::at(center), part_label)
    }

    pub fn cuboid(center: Point, half_extents: Point, part_label: u16) -> Result<Self> {
        Self::new(PrimitiveKind::Box { half_extents }, Pose::at(center), part_label)
    }

    pub fn cylinder(
        center: Point,
        axis: Axis,
        radius: f64,
        half_height: f64,
        part_label: u16,
    ) -> Result<Self> {
        Self::new(
            PrimitiveKind::Cylinder {
                radius,
                half_height,
            },
            Pose::along(center, axis),
            part_label,
        )
    }

    pub fn capsule(
        center: Point,
        axis: Axis,
        radius: f64,
        half_length: f64,
        part_label: u16,
    ) -> Result<Self> {
        Self::new(
            PrimitiveKind::Capsule {
                radius,
                half_length,
            },
            Pose::along(center, axis),
            part_label,
        )
    }

    #[inline]
    fn local(&self, p: Point) -> Point {
        let t = self.pose.translation;
        self.pose
            .axis
            .to_local([p[0] - t[0], p[1] - t[1], p[2] - t[2]])
    }

    #[inline]
    fn world(&self, l: Point) -> Point {
        let w = self.pose.axis.to_world(l);
        let t = self.pose.translation;
        [w[0] + t[0], w[1] + t[1], w[2] + t[2]]
    }

    /// Exact signed distance to this primitive's surface.
    pub fn sdf(&self, p: Point) -> f64 {
        let q = self.local(p);
        match self.kind {
            PrimitiveKind::Sphere { radius } => norm(q) - radius,
            PrimitiveKind::Box { half_extents: h } => {
                let d = [q[0].abs() - h[0], q[1].abs() - h[1], q[2].abs() - h[2]];
                let outside = norm([d[0].max(0.0), d[1].max(0.0), d[2].max(0.0)]);
                outside + d[0].max(d[1]).max(d[2]).min(0.0)
            }
            PrimitiveKind::Cylinder {
                radius,
                half_height,
            } => {
                let dr = q[0].hypot(q[1]) - radius;
                let dz = q[2].abs() - half_height;
                dr.max(dz).min(0.0) + dr.max(0.0).hypot(dz.max(0.0))
            }
            PrimitiveKind::Capsule {
                radius,
                half_length,
            } => {
                let z = q[2] - q[2].clamp(-half_length, half_length);
                norm([q[0], q[1], z]) - radius
            }
        }
    }

    /// Axis-aligned bounds in world coordinates.
    pub fn bounds(&self) -> (Point, Point) {
        let ext = match self.kind {
            PrimitiveKind::Sphere { radius } => [radius; 3],
            PrimitiveKind::Box { half_extents } => half_extents,
            PrimitiveKind::Cylinder {
                radius,
                half_height,
            } => [radius, radius, half_height],
            PrimitiveKind::Capsule {
                radius,
                half_length,
            } => [radius, radius, half_length + radius],
        };
        let w = self.pose.axis.to_world(ext);
        let t = self.pose.translation;
        (
            [t[0] - w[0], t[1] - w[1], t[2] - w[2]],
            [t[0] + w[0], t[1] + w[1], t[2] + w[2]],
        )
    }

    pub fn volume(&self) -> f64 {
        match self.kind {
            PrimitiveKind::Sphere { radius } => 4.0 / 3.0 * PI * radius.powi(3),
            PrimitiveKind::Box { half_extents: h } => 8.0 * h[0] * h[1] * h[2],
            PrimitiveKind::Cylinder {
                radius,
                half_height,
            } => PI * radius * radius * 2.0 * half_height,
            PrimitiveKind::Capsule {
                radius,
                half_length,
            } => PI * radius * radius * 2.0 * half_length + 4.0 / 3.0 * PI * radius.powi(3),
        }
    }

    pub fn surface_area(&self) -> f64 {
        match self.kind {
            PrimitiveKind::Sphere { radius } => 4.0 * PI * radius * radius,
            PrimitiveKind::Box { half_extents: h } => {
                8.0 * (h[0] * h[1] + h[1] * h[2] + h[0] * h[2])
            }
            PrimitiveKind::Cylinder {
                radius,
                half_height,
            } => 2.0 * PI * radius * 2.0 * half_height + 2.0 * PI * radius * radius,
            PrimitiveKind::Capsule {
                radius,
                half_length,
            } => 2.0 * PI * radius * 2.0 * half_length + 4.0 * PI * radius * radius,
        }
    }

    /// Uniform (area-weighted) sample on this primitive's own surface.
    pub fn sample_surface<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        let local = match self.kind {
            PrimitiveKind::Sphere { radius } => scale_dir(unit_vector(rng), radius),
            PrimitiveKind::Box { half_extents: h } => {
                let areas = [h[1] * h[2], h[0] * h[2], h[0] * h[1]];
                let total = areas[0] + areas[1] + areas[2];
                let mut pick = rng.random::<f64>() * total;
                let mut axis = 2;
                for (i, a) in areas.iter().enumerate() {
                    if pick < *a {
                        axis = i;
                        break;
                    }
                    pick -= a;
                }
                let mut l = [
                    rng.random_range(-h[0]..=h[0]),
                    rng.random_range(-h[1]..=h[1]),
                    rng.random_range(-h[2]..=h[2]),
                ];
                l[axis] = if rng.random::<bool>() { h[axis] } else { -h[axis] };
                l
            }
            PrimitiveKind::Cylinder {
                radius,
                half_height,
            } => {
                let side = 2.0 * radius * 2.0 * half_height;
                let caps = 2.0 * radius * radius;
                let theta = rng.random::<f64>() * 2.0 * PI;
                if rng.random::<f64>() * (side + caps) < side {
                    let z = rng.random_range(-half_height..=half_height);
                    [radius * theta.cos(), radius * theta.sin(), z]
                } else {
                    let r = radius * rng.random::<f64>().sqrt();
                    let z = if rng.random::<bool>() {
                        half_height
                    } else {
                        -half_height
                    };
                    [r * theta.cos(), r * theta.sin(), z]
                }
            }
            PrimitiveKind::Capsule {
                radius,
                half_length,
            } => {
                let side = 2.0 * half_length;
                let ends = 2.0 * radius;
                if rng.random::<f64>() * (side + ends) < side {
                    let theta = rng.random::<f64>() * 2.0 * PI;
                    let z = rng.random_range(-half_length..=half_length);
                    [radius * theta.cos(), radius * theta.sin(), z]
                } else {
                    let d = scale_dir(unit_vector(rng), radius);
                    let cap = if d[2] >= 0.0 { half_length } else { -half_length };
                    [d[0], d[1], d[2] + cap]
                }
            }
        };
        self.world(local)
    }
}

fn scale_dir(d: Point, s: f64) -> Point {
    [d[0] * s, d[1] * s, d[2] * s]
}

fn unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Point {
    let z: f64 = rng.random_range(-1.0..=1.0);
    let theta = rng.random::<f64>() * 2.0 * PI;
    let r = (1.0 - z * z).max(0.0).sqrt();
    [r * theta.cos(), r * theta.sin(), z]
}
