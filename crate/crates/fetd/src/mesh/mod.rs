//! Unstructured conforming triangle meshes: connectivity, validation,
//! uniform refinement, file I/O, the bundled scatterer-mesh generator, and
//! edge classification for the reduced scheme.
//!
//! Conventions used everywhere:
//!
//! * triangles store vertex ids counter-clockwise;
//! * an edge is the unordered pair of its endpoints, stored as
//!   `(lower id, higher id)`, and its tangent points from the lower to the
//!   higher id;
//! * a boundary edge has exactly one adjacent triangle, an interior edge
//!   exactly two;
//! * per-triangle integer labels carry material regions (0 = surrounding
//!   medium, 1 = scatterer).

pub mod classify;
pub mod io;
pub mod material;
pub mod quality;
pub mod scatterer;

pub use classify::{classify_reduced_edges, ReducedEdgeSet, ReductionPolicy};
pub use material::MaterialField;
pub use scatterer::{generate_scatterer_mesh, ScattererGeometry};

use crate::error::{Error, Result};
use crate::fem::geometry::ElementGeometry;
use crate::vec2::{dist, midpoint, Vec2};
use std::collections::HashMap;

/// One mesh edge with its adjacency.
#[derive(Debug, Clone)]
pub struct Edge {
    /// Endpoint vertex ids, `verts[0] < verts[1]`; the edge tangent points
    /// from `verts[0]` to `verts[1]`.
    pub verts: [usize; 2],
    /// Adjacent triangle ids; `tris[1]` is `None` on the boundary.
    pub tris: [Option<usize>; 2],
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.tris[1].is_none()
    }
}

/// A conforming triangle mesh with derived connectivity.
#[derive(Debug, Clone)]
pub struct Mesh {
    /// Vertex coordinates.
    pub vertices: Vec<Vec2>,
    /// Triangles as counter-clockwise vertex id triples.
    pub triangles: Vec<[usize; 3]>,
    /// Material label per triangle.
    pub labels: Vec<u32>,
    /// Refinement generation (0 for a freshly built or parsed mesh unless
    /// set by [`Mesh::refine_uniform`]).
    pub level: u32,
    /// Edge table; ids are stable for a given mesh.
    pub edges: Vec<Edge>,
    /// For each triangle, the edge id of local edge `(v_k, v_{k+1})`,
    /// `k = 0, 1, 2`.
    pub tri_edges: Vec<[usize; 3]>,
    /// Precomputed per-element geometry.
    geoms: Vec<ElementGeometry>,
}

impl Mesh {
    /// Builds connectivity for raw vertex/triangle data and validates it:
    /// indices in range, counter-clockwise non-degenerate triangles, no edge
    /// shared by more than two triangles.
    pub fn build(
        vertices: Vec<Vec2>,
        triangles: Vec<[usize; 3]>,
        labels: Vec<u32>,
        level: u32,
    ) -> Result<Self> {
        if labels.len() != triangles.len() {
            return Err(Error::InvalidMesh(format!(
                "{} labels for {} triangles",
                labels.len(),
                triangles.len()
            )));
        }
        let mut geoms = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                if v >= vertices.len() {
                    return Err(Error::InvalidMesh(format!(
                        "triangle {t} references vertex {v}, but there are only {} vertices",
                        vertices.len()
                    )));
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::InvalidMesh(format!(
                    "triangle {t} repeats a vertex: {tri:?}"
                )));
            }
            let geom = ElementGeometry::new(
                vertices[tri[0]],
                vertices[tri[1]],
                vertices[tri[2]],
            )
            .map_err(|e| Error::InvalidMesh(format!("triangle {t}: {e}")))?;
            geoms.push(geom);
        }

        let mut edge_ids: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edges: Vec<Edge> = Vec::new();
        let mut tri_edges = vec![[usize::MAX; 3]; triangles.len()];
        for (t, tri) in triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                let id = *edge_ids.entry(key).or_insert_with(|| {
                    edges.push(Edge {
                        verts: [key.0, key.1],
                        tris: [None, None],
                    });
                    edges.len() - 1
                });
                let e = &mut edges[id];
                if e.tris[0].is_none() {
                    e.tris[0] = Some(t);
                } else if e.tris[1].is_none() {
                    e.tris[1] = Some(t);
                } else {
                    return Err(Error::InvalidMesh(format!(
                        "edge ({}, {}) is shared by more than two triangles",
                        key.0, key.1
                    )));
                }
                tri_edges[t][k] = id;
            }
        }
        Ok(Self {
            vertices,
            triangles,
            labels,
            level,
            edges,
            tri_edges,
            geoms,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Precomputed geometry of triangle `t`.
    pub fn geometry(&self, t: usize) -> &ElementGeometry {
        &self.geoms[t]
    }

    pub fn edge_length(&self, e: usize) -> f64 {
        let [a, b] = self.edges[e].verts;
        dist(self.vertices[a], self.vertices[b])
    }

    /// Longest edge in the mesh (the mesh size `h`).
    pub fn max_edge_length(&self) -> f64 {
        (0..self.n_edges())
            .map(|e| self.edge_length(e))
            .fold(0.0_f64, f64::max)
    }

    /// Ids of all boundary edges.
    pub fn boundary_edges(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_edges()).filter(|&e| self.edges[e].is_boundary())
    }

    /// Whether the (boundary) edge, traversed from its lower to its higher
    /// vertex id, runs along the positive (counter-clockwise) orientation of
    /// the domain boundary.  The adjacent triangle's cycle decides.
    pub fn boundary_edge_is_ccw(&self, e: usize) -> Result<bool> {
        let edge = &self.edges[e];
        if !edge.is_boundary() {
            return Err(Error::Contract(format!("edge {e} is not a boundary edge")));
        }
        let t = edge.tris[0].expect("boundary edge has one triangle");
        let tri = self.triangles[t];
        for k in 0..3 {
            if tri[k] == edge.verts[0] && tri[(k + 1) % 3] == edge.verts[1] {
                return Ok(true);
            }
            if tri[k] == edge.verts[1] && tri[(k + 1) % 3] == edge.verts[0] {
                return Ok(false);
            }
        }
        unreachable!("edge adjacency is consistent by construction");
    }

    /// Uniform (red) refinement: each triangle is split into four congruent
    /// children through its edge midpoints.  Labels are inherited, the
    /// refinement level increments, and the children of parent `t` occupy
    /// indices `4 t .. 4 t + 4` in a fixed order (corner children at the
    /// parent's vertices 0, 1, 2, then the central child).
    pub fn refine_uniform(&self) -> Result<Mesh> {
        let nv = self.n_vertices();
        let mut vertices = self.vertices.clone();
        vertices.extend(
            self.edges
                .iter()
                .map(|e| midpoint(self.vertices[e.verts[0]], self.vertices[e.verts[1]])),
        );
        let mut triangles = Vec::with_capacity(4 * self.n_triangles());
        let mut labels = Vec::with_capacity(4 * self.n_triangles());
        for t in 0..self.n_triangles() {
            let [a, b, c] = self.triangles[t];
            let m01 = nv + self.tri_edges[t][0];
            let m12 = nv + self.tri_edges[t][1];
            let m20 = nv + self.tri_edges[t][2];
            triangles.push([a, m01, m20]);
            triangles.push([m01, b, m12]);
            triangles.push([m20, m12, c]);
            triangles.push([m01, m12, m20]);
            for _ in 0..4 {
                labels.push(self.labels[t]);
            }
        }
        Mesh::build(vertices, triangles, labels, self.level + 1)
    }
}

#[cfg(test)]
pub mod testmesh {
    use super::*;

    /// Single reference triangle.
    pub fn one_triangle() -> Mesh {
        Mesh::build(
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            vec![[0, 1, 2]],
            vec![0],
            0,
        )
        .unwrap()
    }

    /// Unit square split along the diagonal (0,0)-(1,1).
    pub fn two_triangles() -> Mesh {
        Mesh::build(
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            vec![[0, 1, 2], [0, 2, 3]],
            vec![0, 0],
            0,
        )
        .unwrap()
    }

    /// A structured `n x n` criss-cross square mesh on `(0, 1)^2` (each cell
    /// split along one diagonal), handy for convergence-style unit tests.
    pub fn unit_square(n: usize) -> Mesh {
        let mut vertices = Vec::new();
        for j in 0..=n {
            for i in 0..=n {
                vertices.push([i as f64 / n as f64, j as f64 / n as f64]);
            }
        }
        let id = |i: usize, j: usize| j * (n + 1) + i;
        let mut triangles = Vec::new();
        for j in 0..n {
            for i in 0..n {
                let (v00, v10, v01, v11) = (id(i, j), id(i + 1, j), id(i, j + 1), id(i + 1, j + 1));
                if (i + j) % 2 == 0 {
                    triangles.push([v00, v10, v11]);
                    triangles.push([v00, v11, v01]);
                } else {
                    triangles.push([v00, v10, v01]);
                    triangles.push([v10, v11, v01]);
                }
            }
        }
        let labels = vec![0; triangles.len()];
        Mesh::build(vertices, triangles, labels, 0).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::testmesh::*;
    use super::*;

    #[test]
    fn one_triangle_counts() {
        let m = one_triangle();
        assert_eq!(m.n_vertices(), 3);
        assert_eq!(m.n_triangles(), 1);
        assert_eq!(m.n_edges(), 3);
        assert_eq!(m.boundary_edges().count(), 3);
    }

    #[test]
    fn two_triangle_square_has_one_interior_edge() {
        let m = two_triangles();
        assert_eq!(m.n_vertices(), 4);
        assert_eq!(m.n_edges(), 5);
        assert_eq!(m.boundary_edges().count(), 4);
        let interior: Vec<_> = (0..m.n_edges())
            .filter(|&e| !m.edges[e].is_boundary())
            .collect();
        assert_eq!(interior.len(), 1);
        assert_eq!(m.edges[interior[0]].verts, [0, 2]);
    }

    #[test]
    fn euler_formula_for_simply_connected_patches() {
        // V - E + T = 1 for a triangulated disk.
        for m in [one_triangle(), two_triangles(), unit_square(4)] {
            let euler =
                m.n_vertices() as i64 - m.n_edges() as i64 + m.n_triangles() as i64;
            assert_eq!(euler, 1);
        }
    }

    #[test]
    fn refine_one_triangle() {
        let m = one_triangle().refine_uniform().unwrap();
        assert_eq!(m.n_triangles(), 4);
        assert_eq!(m.n_vertices(), 6);
        assert_eq!(m.n_edges(), 9);
        assert_eq!(m.level, 1);
        // All children congruent: area quarters.
        for t in 0..4 {
            assert!((m.geometry(t).area - 0.125).abs() < 1e-15);
        }
    }

    #[test]
    fn refinement_halves_every_edge_and_nests() {
        let coarse = unit_square(3);
        let fine = coarse.refine_uniform().unwrap();
        assert_eq!(fine.n_triangles(), 4 * coarse.n_triangles());
        let ratio = fine.max_edge_length() / coarse.max_edge_length();
        assert!((ratio - 0.5).abs() < 1e-12);
        // Every coarse edge splits into two fine edges (i, mid) and (mid, j)
        // where mid is the coarse edge's midpoint vertex.
        let nv = coarse.n_vertices();
        let has_edge = |a: usize, b: usize| {
            fine.edges
                .iter()
                .any(|e| e.verts == [a.min(b), a.max(b)])
        };
        for (eid, e) in coarse.edges.iter().enumerate() {
            let mid = nv + eid;
            assert!(has_edge(e.verts[0], mid), "missing lower half of edge {eid}");
            assert!(has_edge(e.verts[1], mid), "missing upper half of edge {eid}");
            let pm = fine.vertices[mid];
            let want = midpoint(coarse.vertices[e.verts[0]], coarse.vertices[e.verts[1]]);
            assert_eq!(pm, want);
        }
        // Labels inherited positionally.
        for t in 0..coarse.n_triangles() {
            for c in 0..4 {
                assert_eq!(fine.labels[4 * t + c], coarse.labels[t]);
            }
        }
    }

    #[test]
    fn rejects_nonconforming_and_degenerate_input() {
        // Three triangles on one edge.
        let r = Mesh::build(
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.5, -1.0], [1.5, 1.0]],
            vec![[0, 1, 2], [0, 3, 1], [1, 4, 0]],
            vec![0, 0, 0],
            0,
        );
        assert!(matches!(r, Err(Error::InvalidMesh(_))));
        // Inverted (clockwise) triangle.
        let r = Mesh::build(
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            vec![[0, 2, 1]],
            vec![0],
            0,
        );
        assert!(r.is_err());
        // Out-of-range vertex id.
        let r = Mesh::build(vec![[0.0, 0.0], [1.0, 0.0]], vec![[0, 1, 2]], vec![0], 0);
        assert!(r.is_err());
    }

    #[test]
    fn boundary_orientation_follows_triangle_cycles() {
        let m = one_triangle();
        // Edges (0,1) and (1,2) appear in cycle order; (0,2) appears as 2->0.
        for e in 0..3 {
            let verts = m.edges[e].verts;
            let ccw = m.boundary_edge_is_ccw(e).unwrap();
            match verts {
                [0, 1] | [1, 2] => assert!(ccw),
                [0, 2] => assert!(!ccw),
                other => panic!("unexpected edge {other:?}"),
            }
        }
    }
}
