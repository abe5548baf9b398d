//! Edge-moment interpolation into the discrete spaces.
//!
//! On an edge from its lower endpoint `a` to its higher endpoint `b` with
//! unit tangent `t = (b - a) / |b - a|`, write
//!
//! ```text
//! m0 = ∫ v·t ds        (zeroth tangential moment, arc-length measure)
//! m1 = ∫ v·t s ds      (first moment; s is the affine parameter, 0 at a, 1 at b)
//! ```
//!
//! The tail and head slots have tangential traces `(1 - s) / len` and
//! `s / len`, so matching both moments gives the coefficients
//!
//! ```text
//! tail = 4 m0 - 6 m1,      head = 6 m1 - 2 m0,
//! ```
//!
//! and a merged edge takes the single coefficient `m0` (its basis function
//! has constant trace `1 / len`).  Merged interpolation therefore averages
//! the two slot coefficients: `m0 = (tail + head) / 2`.

use crate::mesh::Mesh;
use crate::vec2::{self, Vec2};

use super::dofmap::{DofMap, DofVector};
use super::quad::edge_integrate;

/// Interpolates a vector field by its tangential edge moments.
pub fn interpolate(mesh: &Mesh, map: &DofMap, mut v: impl FnMut(Vec2) -> Vec2) -> DofVector {
    let mut out = DofVector::zeros(map);
    for (e, edge) in mesh.edges.iter().enumerate() {
        let a = mesh.vertices[edge.verts[0]];
        let b = mesh.vertices[edge.verts[1]];
        let tangent = vec2::scale(1.0 / vec2::dist(a, b), vec2::sub(b, a));
        let m0 = edge_integrate(a, b, |p, _| vec2::dot(v(p), tangent));
        let (first, second) = map.edge_dofs(e);
        match second {
            Some(head) => {
                let m1 = edge_integrate(a, b, |p, s| vec2::dot(v(p), tangent) * s);
                out.data[first] = 4.0 * m0 - 6.0 * m1;
                out.data[head] = 6.0 * m1 - 2.0 * m0;
            }
            None => out.data[first] = m0,
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::basis::eval_basis;
    use crate::mesh::classify::ReducedEdgeSet;
    use crate::mesh::testmesh;

    /// Evaluates the interpolant inside triangle `t` by summing local slots.
    fn eval_local(mesh: &Mesh, map: &DofMap, u: &DofVector, t: usize, p: [f64; 2]) -> [f64; 2] {
        let geom = mesh.geometry(t);
        let mut val = [0.0, 0.0];
        for (g, ld) in map.element_dofs(mesh, t) {
            val = vec2::add(val, vec2::scale(u.data[g], eval_basis(geom, ld, p)));
        }
        val
    }

    #[test]
    fn linear_fields_are_reproduced_exactly() {
        let mesh = testmesh::unit_square(3);
        let map = DofMap::full(&mesh);
        let field = |p: [f64; 2]| {
            [0.3 - 1.2 * p[0] + 0.7 * p[1], -0.8 + 0.4 * p[0] + 2.0 * p[1]]
        };
        let u = interpolate(&mesh, &map, field);
        for t in (0..mesh.n_triangles()).step_by(3) {
            for l in [[0.2, 0.3, 0.5], [0.6, 0.1, 0.3], [1.0 / 3.0; 3]] {
                let p = mesh.geometry(t).point(l);
                let got = eval_local(&mesh, &map, &u, t, p);
                let want = field(p);
                assert!(vec2::dist(got, want) < 1e-13, "{got:?} vs {want:?}");
            }
        }
    }

    #[test]
    fn merged_interpolation_reproduces_constants() {
        let mesh = testmesh::unit_square(3);
        let all = ReducedEdgeSet {
            reduced: vec![true; mesh.n_edges()],
            count: mesh.n_edges(),
        };
        let map = DofMap::reduced(&mesh, &all);
        let field = |_: [f64; 2]| [0.75, -0.35];
        let u = interpolate(&mesh, &map, field);
        for t in 0..mesh.n_triangles() {
            let p = mesh.geometry(t).centroid();
            let got = eval_local(&mesh, &map, &u, t, p);
            assert!(vec2::dist(got, [0.75, -0.35]) < 1e-13);
        }
    }

    #[test]
    fn merged_coefficient_averages_the_two_slots() {
        let mesh = testmesh::two_triangles();
        let full = DofMap::full(&mesh);
        let all = ReducedEdgeSet {
            reduced: vec![true; mesh.n_edges()],
            count: mesh.n_edges(),
        };
        let red = DofMap::reduced(&mesh, &all);
        let field = |p: [f64; 2]| [p[1] * p[1] - 0.2, p[0] * p[0] + 0.1 * p[0]];
        let uf = interpolate(&mesh, &full, field);
        let ur = interpolate(&mesh, &red, field);
        for e in 0..mesh.n_edges() {
            let (tail, head) = full.edge_dofs(e);
            let (merged, none) = red.edge_dofs(e);
            assert!(none.is_none());
            let avg = 0.5 * (uf.data[tail] + uf.data[head.unwrap()]);
            assert!((ur.data[merged] - avg).abs() < 1e-14);
        }
    }

    #[test]
    fn slot_coefficients_match_hand_values_on_the_reference_edge() {
        // On the unit-square mesh the edge from (0, 0) to (1, 0) has unit
        // tangent (1, 0).  For v = (s, 0) with s = x: m0 = 1/2, m1 = 1/3,
        // so tail = 4/2 - 6/3 = 0 and head = 6/3 - 2/2 = 1.
        let mesh = testmesh::unit_square(1);
        let map = DofMap::full(&mesh);
        let u = interpolate(&mesh, &map, |p| [p[0], 0.0]);
        let e = (0..mesh.n_edges())
            .find(|&e| {
                let [a, b] = mesh.edges[e].verts;
                mesh.vertices[a] == [0.0, 0.0] && mesh.vertices[b] == [1.0, 0.0]
            })
            .expect("bottom edge");
        let (tail, head) = map.edge_dofs(e);
        assert!((u.data[tail] - 0.0).abs() < 1e-14);
        assert!((u.data[head.unwrap()] - 1.0).abs() < 1e-14);
    }
}
