use std::collections::HashMap;

use super::mc_tables::{EDGE_TABLE, TRIANGLE_TABLE};
use super::mesh::Mesh;
use crate::geometry::Point;

/// Corner offsets in table order.
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// Corner pairs joined by each edge.
const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [3, 2],
    [0, 3],
    [4, 5],
    [5, 6],
    [7, 6],
    [4, 7],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// Scalar samples on a regular grid, `x` varying fastest.
#[derive(Debug, Clone)]
pub struct Grid {
    pub dims: [usize; 3],
    pub origin: Point,
    pub spacing: Point,
    pub values: Vec<f64>,
}

impl Grid {
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    pub fn point(&self, i: usize, j: usize, k: usize) -> Point {
        [
            self.origin[0] + i as f64 * self.spacing[0],
            self.origin[1] + j as f64 * self.spacing[1],
            self.origin[2] + k as f64 * self.spacing[2],
        ]
    }

    /// All grid points in storage order.
    pub fn points(dims: [usize; 3], origin: Point, spacing: Point) -> Vec<Point> {
        let mut out = Vec::with_capacity(dims.iter().product());
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    out.push([
                        origin[0] + i as f64 * spacing[0],
                        origin[1] + j as f64 * spacing[1],
                        origin[2] + k as f64 * spacing[2],
                    ]);
                }
            }
        }
        out
    }
}

/// Triangulate the boundary of `{value > level}`. Vertices are placed by
/// linear interpolation along cell edges and shared between neighbouring
/// cells, so closed level sets give watertight meshes.
pub fn marching_cubes(grid: &Grid, level: f64) -> Mesh {
    let [nx, ny, nz] = grid.dims;
    let mut mesh = Mesh::default();
    if nx < 2 || ny < 2 || nz < 2 {
        return mesh;
    }
    // Keyed by (lower grid point, axis).
    let mut edge_vertex: HashMap<(usize, usize), u32> = HashMap::new();
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let corner = |c: usize| {
                    let [di, dj, dk] = CORNERS[c];
                    (i + di, j + dj, k + dk)
                };
                let mut case = 0usize;
                for c in 0..8 {
                    let (a, b, d) = corner(c);
                    if grid.values[grid.index(a, b, d)] <= level {
                        case |= 1 << c;
                    }
                }
                let crossed = EDGE_TABLE[case];
                if crossed == 0 {
                    continue;
                }
                let mut ids = [0u32; 12];
                for (e, &[c0, c1]) in EDGES.iter().enumerate() {
                    if crossed & (1 << e) == 0 {
                        continue;
                    }
                    let (p0, p1) = (corner(c0), corner(c1));
                    let axis = (0..3)
                        .find(|&a| [p0.0, p0.1, p0.2][a] != [p1.0, p1.1, p1.2][a])
                        .expect("edge spans one axis");
                    let lo = grid.index(p0.0, p0.1, p0.2);
                    ids[e] = *edge_vertex.entry((lo, axis)).or_insert_with(|| {
                        let (v0, v1) = (grid.values[lo], grid.values[grid.index(p1.0, p1.1, p1.2)]);
                        let t = if v1 != v0 { ((level - v0) / (v1 - v0)).clamp(0.0, 1.0) } else { 0.5 };
                        let mut p = grid.point(p0.0, p0.1, p0.2);
                        p[axis] += t * grid.spacing[axis];
                        mesh.vertices.push(p);
                        (mesh.vertices.len() - 1) as u32
                    });
                }
                for tri in TRIANGLE_TABLE[case].chunks(3).take_while(|t| t[0] >= 0) {
                    mesh.triangles.push([ids[tri[0] as usize], ids[tri[1] as usize], ids[tri[2] as usize]]);
                }
            }
        }
    }
    mesh
}
