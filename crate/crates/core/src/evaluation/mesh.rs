use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::geometry::{add, cross, dot, norm, scale, sub, Point};
use crate::{Error, Result};

/// Indexed triangle mesh. Triangles are counter-clockwise seen from outside.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Mesh {
    pub vertices: Vec<Point>,
    pub triangles: Vec<[u32; 3]>,
}

impl Mesh {
    pub fn new(vertices: Vec<Point>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let n = vertices.len();
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i as usize >= n)) {
            return Err(Error::invalid("mesh", format!("triangle {t:?} indexes past {n} vertices")));
        }
        Ok(Mesh { vertices, triangles })
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    fn corners(&self, t: &[u32; 3]) -> [Point; 3] {
        t.map(|i| self.vertices[i as usize])
    }

    /// Twice-area normal of a triangle.
    fn face_normal(&self, t: &[u32; 3]) -> Point {
        let [a, b, c] = self.corners(t);
        cross(sub(b, a), sub(c, a))
    }

    pub fn area(&self) -> f64 {
        self.triangles.iter().map(|t| 0.5 * norm(self.face_normal(t))).sum()
    }

    /// Enclosed volume by the divergence theorem; positive for outward
    /// orientation.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = self.corners(t);
                dot(a, cross(b, c)) / 6.0
            })
            .sum()
    }

    /// Every edge is used by exactly two triangles, once in each direction.
    pub fn is_watertight(&self) -> bool {
        if self.triangles.is_empty() {
            return false;
        }
        let mut directed: HashMap<(u32, u32), u32> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                *directed.entry((t[k], t[(k + 1) % 3])).or_default() += 1;
            }
        }
        directed
            .iter()
            .all(|(&(a, b), &count)| count == 1 && directed.get(&(b, a)) == Some(&1))
    }

    /// Area-weighted vertex normals, unit length (zero for isolated vertices).
    pub fn vertex_normals(&self) -> Vec<Point> {
        let mut normals = vec![[0.0; 3]; self.vertices.len()];
        for t in &self.triangles {
            let n = self.face_normal(t);
            for &i in t {
                normals[i as usize] = add(normals[i as usize], n);
            }
        }
        normals
            .into_iter()
            .map(|n| {
                let len = norm(n);
                if len > 0.0 {
                    scale(n, 1.0 / len)
                } else {
                    n
                }
            })
            .collect()
    }

    /// `n` points uniform over the surface area.
    pub fn sample_surface<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Point>> {
        let mut cumulative = Vec::with_capacity(self.triangles.len());
        let mut total = 0.0;
        for t in &self.triangles {
            total += norm(self.face_normal(t));
            cumulative.push(total);
        }
        if !(total > 0.0) {
            return Err(Error::EmptyMesh("cannot sample a mesh with zero area"));
        }
        Ok((0..n)
            .map(|_| {
                let pick = rng.random::<f64>() * total;
                let i = cumulative.partition_point(|&c| c <= pick).min(cumulative.len() - 1);
                let [a, b, c] = self.corners(&self.triangles[i]);
                let (mut u, mut v) = (rng.random::<f64>(), rng.random::<f64>());
                if u + v > 1.0 {
                    (u, v) = (1.0 - u, 1.0 - v);
                }
                add(a, add(scale(sub(b, a), u), scale(sub(c, a), v)))
            })
            .collect())
    }

    pub fn to_off(&self) -> String {
        let mut out = format!("OFF\n{} {} 0\n", self.vertices.len(), self.triangles.len());
        for v in &self.vertices {
            writeln!(out, "{} {} {}", v[0], v[1], v[2]).expect("string write");
        }
        for t in &self.triangles {
            writeln!(out, "3 {} {} {}", t[0], t[1], t[2]).expect("string write");
        }
        out
    }

    pub fn from_off(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Decode(format!("OFF: {msg}"));
        let mut tokens = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(str::split_whitespace);
        if tokens.next() != Some("OFF") {
            return Err(bad("missing OFF header"));
        }
        let mut count = || -> Result<usize> {
            tokens
                .next()
                .ok_or_else(|| bad("truncated counts"))?
                .parse()
                .map_err(|_| bad("bad count"))
        };
        let (nv, nf, _) = (count()?, count()?, count()?);
        let mut next_f64 = || -> Result<f64> {
            tokens
                .next()
                .ok_or_else(|| bad("truncated data"))?
                .parse()
                .map_err(|_| bad("bad number"))
        };
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            vertices.push([next_f64()?, next_f64()?, next_f64()?]);
        }
        let mut triangles = Vec::with_capacity(nf);
        for _ in 0..nf {
            if next_f64()? != 3.0 {
                return Err(bad("only triangle faces are supported"));
            }
            let mut t = [0u32; 3];
            for slot in &mut t {
                let v = next_f64()?;
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(bad("bad vertex index"));
                }
                *slot = v as u32;
            }
            triangles.push(t);
        }
        Mesh::new(vertices, triangles)
    }

    pub fn write_off(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_off()).map_err(|e| Error::io(path, e))
    }

    pub fn read_off(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Mesh::from_off(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }
}

/// One label per line, in vertex order.
pub fn write_labels(path: impl AsRef<Path>, labels: &[u16]) -> Result<()> {
    let path = path.as_ref();
    let text: String = labels.iter().map(|l| format!("{l}\n")).collect();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<u16>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim().parse().map_err(|_| Error::Format {
                path: path.to_path_buf(),
                msg: format!("bad label `{l}`"),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tetrahedron() -> Mesh {
        let v = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let t = vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]];
        Mesh::new(v, t).unwrap()
    }

    #[test]
    fn tetrahedron_measures() {
        let m = tetrahedron();
        assert!(m.is_watertight());
        assert!((m.signed_volume() - 1.0 / 6.0).abs() < 1e-15);
        let area = 1.5 + 3f64.sqrt() / 2.0;
        assert!((m.area() - area).abs() < 1e-12);
    }

    #[test]
    fn open_or_flipped_meshes_are_not_watertight() {
        let mut m = tetrahedron();
        m.triangles.pop();
        assert!(!m.is_watertight());
        let mut m = tetrahedron();
        m.triangles[0] = [0, 1, 2];
        assert!(!m.is_watertight());
    }

    #[test]
    fn off_round_trip() {
        let m = tetrahedron();
        let back = Mesh::from_off(&m.to_off()).unwrap();
        assert_eq!(back, m);
        assert!(Mesh::from_off("OFF\n1 1 0\n0 0 0\n3 0 0 5\n").is_err());
        assert!(Mesh::from_off("PLY").is_err());
    }

    #[test]
    fn samples_lie_on_faces() {
        let m = tetrahedron();
        let mut rng = crate::rng::stream(3, &[]);
        for p in m.sample_surface(500, &mut rng).unwrap() {
            let on_face = p.iter().any(|c| c.abs() < 1e-12) || (p[0] + p[1] + p[2] - 1.0).abs() < 1e-12;
            assert!(on_face, "{p:?}");
        }
        assert!(Mesh::default().sample_surface(1, &mut rng).is_err());
    }
}
