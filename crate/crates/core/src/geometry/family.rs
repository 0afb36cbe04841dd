use rand::Rng;
use std::fmt;
use std::str::FromStr;

use super::{Axis, LabeledShape, Primitive};
use crate::rng::stream;
use crate::{Error, Result};

/// Surface vertices per generated shape.
pub const DEFAULT_SURFACE_VERTICES: usize = 2048;

/// Built-in procedural shape families. Each has a fixed part schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    /// Two spheres on a line, one part.
    Spheres,
    /// Sphere, handle, sphere: parts 0, 1, 2.
    Dumbbell,
    /// Box top (0) on four cylinder legs (1).
    Table,
    /// Two crossing bars, parts 0 and 1.
    Cross,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Spheres, Family::Dumbbell, Family::Table, Family::Cross];

    pub fn name(self) -> &'static str {
        match self {
            Family::Spheres => "spheres",
            Family::Dumbbell => "dumbbell",
            Family::Table => "table",
            Family::Cross => "cross",
        }
    }

    pub fn n_parts(self) -> u16 {
        match self {
            Family::Spheres => 1,
            Family::Dumbbell => 3,
            Family::Table | Family::Cross => 2,
        }
    }

    /// Primitives for one random instance, roughly inside [-0.5, 0.5]^3.
    pub fn primitives<R: Rng + ?Sized>(self, rng: &mut R) -> Result<Vec<Primitive>> {
        let axis = Axis::ALL[rng.random_range(0..3)];
        let along = |t: f64| {
            let mut c = [0.0; 3];
            c[axis.index()] = t;
            c
        };
        match self {
            Family::Spheres => {
                let half = rng.random_range(0.12..0.32);
                Ok(vec![
                    Primitive::sphere(along(-half), rng.random_range(0.15..0.25), 0)?,
                    Primitive::sphere(along(half), rng.random_range(0.15..0.25), 0)?,
                ])
            }
            Family::Dumbbell => {
                let half = rng.random_range(0.25..0.33);
                Ok(vec![
                    Primitive::sphere(along(-half), rng.random_range(0.13..0.2), 0)?,
                    Primitive::cylinder([0.0; 3], axis, rng.random_range(0.05..0.08), half, 1)?,
                    Primitive::sphere(along(half), rng.random_range(0.13..0.2), 2)?,
                ])
            }
            Family::Table => {
                let hx = rng.random_range(0.3..0.45);
                let hz = rng.random_range(0.25..0.4);
                let top = rng.random_range(0.04..0.07);
                let leg_half = rng.random_range(0.15..0.22);
                let leg_r = rng.random_range(0.035..0.06);
                let inset = 0.02 + leg_r;
                // Legs span y in [-leg_half, leg_half] before centering.
                let shift = -top;
                let mut prims = vec![Primitive::cuboid(
                    [0.0, leg_half + top - 0.005 + shift, 0.0],
                    [hx, top, hz],
                    0,
                )?];
                for (sx, sz) in [(-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0), (1.0, 1.0)] {
                    prims.push(Primitive::cylinder(
                        [sx * (hx - inset), shift, sz * (hz - inset)],
                        Axis::Y,
                        leg_r,
                        leg_half,
                        1,
                    )?);
                }
                Ok(prims)
            }
            Family::Cross => {
                let a = rng.random_range(0.3..0.45);
                let b = rng.random_range(0.3..0.45);
                let t = rng.random_range(0.08..0.13);
                let depth = rng.random_range(0.08..0.13);
                // Bars lie in the plane orthogonal to `axis`.
                let n = axis.index();
                let (u, v) = ((n + 1) % 3, (n + 2) % 3);
                let mut ha = [0.0; 3];
                ha[u] = a;
                ha[v] = t;
                ha[n] = depth;
                let mut hb = [0.0; 3];
                hb[u] = t;
                hb[v] = b;
                hb[n] = depth;
                Ok(vec![
                    Primitive::cuboid([0.0; 3], ha, 0)?,
                    Primitive::cuboid([0.0; 3], hb, 1)?,
                ])
            }
        }
    }

    pub fn generate<R: Rng + ?Sized>(
        self,
        class_label: u16,
        n_vertices: usize,
        rng: &mut R,
    ) -> Result<LabeledShape> {
        let prims = self.primitives(rng)?;
        LabeledShape::generate(class_label, self.n_parts(), prims, n_vertices, rng)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::UnknownFamily(s.to_string()))
    }
}

/// Ordered family list, `name` or `name:count` entries separated by commas.
/// Class labels follow list order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FamilySpec {
    entries: Vec<(Family, Option<usize>)>,
}

impl FamilySpec {
    pub fn new(families: &[Family]) -> Self {
        FamilySpec {
            entries: families.iter().map(|f| (*f, None)).collect(),
        }
    }

    pub fn families(&self) -> Vec<Family> {
        self.entries.iter().map(|e| e.0).collect()
    }

    /// Parts of the largest schema, i.e. the segmentation channel count.
    pub fn max_parts(&self) -> u16 {
        self.entries.iter().map(|e| e.0.n_parts()).max().unwrap_or(1)
    }

    pub fn n_classes(&self) -> usize {
        self.entries.len()
    }

    pub fn explicit_total(&self) -> Option<usize> {
        self.entries.iter().map(|e| e.1).sum()
    }

    /// Per-family quotas. Explicit counts are used as given; otherwise `n`
    /// shapes are split evenly with the remainder going to earlier families.
    pub fn quotas(&self, n: usize) -> Result<Vec<usize>> {
        let explicit = self.entries.iter().filter(|e| e.1.is_some()).count();
        if explicit == self.entries.len() {
            return Ok(self.entries.iter().map(|e| e.1.unwrap_or(0)).collect());
        }
        if explicit > 0 {
            return Err(Error::BadFamilySpec(format!(
                "{self}: give counts for all families or none"
            )));
        }
        let k = self.entries.len();
        Ok((0..k).map(|i| n / k + usize::from(i < n % k)).collect())
    }

    /// Family index for every shape, assigned round-robin over quotas.
    pub fn assignment(&self, n: usize) -> Result<Vec<usize>> {
        let mut left = self.quotas(n)?;
        let total: usize = left.iter().sum();
        let mut out = Vec::with_capacity(total);
        while out.len() < total {
            for (i, q) in left.iter_mut().enumerate() {
                if *q > 0 {
                    *q -= 1;
                    out.push(i);
                }
            }
        }
        Ok(out)
    }
}

impl FromStr for FamilySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let (name, count) = match item.split_once(':') {
                Some((n, c)) => {
                    let c: usize = c
                        .trim()
                        .parse()
                        .map_err(|_| Error::BadFamilySpec(s.to_string()))?;
                    (n.trim(), Some(c))
                }
                None => (item, None),
            };
            let fam: Family = name.parse()?;
            if entries.iter().any(|(f, _)| *f == fam) {
                return Err(Error::BadFamilySpec(format!("{s}: `{name}` repeated")));
            }
            entries.push((fam, count));
        }
        if entries.len() < 2 {
            return Err(Error::BadFamilySpec(format!(
                "{s}: at least two families are required"
            )));
        }
        Ok(FamilySpec { entries })
    }
}

impl fmt::Display for FamilySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (fam, count)) in self.entries.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            match count {
                Some(c) => write!(f, "{fam}:{c}")?,
                None => write!(f, "{fam}")?,
            }
        }
        Ok(())
    }
}

/// Generate `n_shapes` shapes. Shape `i` draws from its own stream keyed by
/// `(seed, i)`, so any subset can be regenerated independently.
pub fn make_dataset(spec: &FamilySpec, n_shapes: usize, seed: u64) -> Result<Vec<LabeledShape>> {
    let families = spec.families();
    spec.assignment(n_shapes)?
        .into_iter()
        .enumerate()
        .map(|(i, fam)| {
            let mut rng = stream(seed, &[i as u64]);
            families[fam].generate(fam as u16, DEFAULT_SURFACE_VERTICES, &mut rng)
        })
        .collect()
}
