//! The two-per-edge tangential basis on a single element.
//!
//! Every edge `(i, j)` of the mesh, oriented from the lower to the higher
//! vertex id, carries two basis functions:
//!
//! ```text
//!     tail slot:   lambda_i * grad(lambda_j)     (anchored at vertex i)
//!     head slot:  -lambda_j * grad(lambda_i)     (anchored at vertex j)
//! ```
//!
//! Restricted to one element, each slot is `sign * lambda_anchor * grad(lambda_other)`
//! for a pair of local vertex indices, which is what [`LocalDof`] records.
//! Properties relied on elsewhere (and pinned by the tests below):
//!
//! * a slot vanishes at every vertex except its anchor, where its value is
//!   `sign * grad(lambda_other)`;
//! * both slots of an edge have the same constant curl on each element;
//! * the sum of the two slots has tangential trace `1/len` along the edge,
//!   i.e. constant — the single basis function of the reduced space;
//! * the tangential trace of either slot vanishes on the other two edges.

use crate::fem::geometry::ElementGeometry;
use crate::vec2::{cross, scale, Vec2};

/// One basis slot restricted to an element, in local vertex indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalDof {
    /// Local index (0..3) of the vertex the slot is anchored at; the basis
    /// function is nonzero only at this vertex.
    pub anchor: usize,
    /// Local index of the vertex whose barycentric gradient gives the
    /// direction.
    pub other: usize,
    /// `false` for the tail slot (`+`), `true` for the head slot (`-`).
    pub negated: bool,
}

impl LocalDof {
    pub fn sign(&self) -> f64 {
        if self.negated {
            -1.0
        } else {
            1.0
        }
    }
}

/// Value of the slot's basis function at `p`.
pub fn eval_basis(geom: &ElementGeometry, dof: LocalDof, p: Vec2) -> Vec2 {
    let l = geom.barycentric(p);
    scale(dof.sign() * l[dof.anchor], geom.grads[dof.other])
}

/// Value at a point already given in barycentric coordinates (avoids the
/// inversion when the caller works on a reference rule).
pub fn eval_basis_bary(geom: &ElementGeometry, dof: LocalDof, l: [f64; 3]) -> Vec2 {
    scale(dof.sign() * l[dof.anchor], geom.grads[dof.other])
}

/// The slot's (constant) scalar curl on the element.
pub fn curl_basis(geom: &ElementGeometry, dof: LocalDof) -> f64 {
    dof.sign() * cross(geom.grads[dof.anchor], geom.grads[dof.other])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::quad::edge_integrate;
    use crate::vec2::{dot, lerp, sub};

    fn reference() -> ElementGeometry {
        ElementGeometry::new([0.0, 0.0], [1.0, 0.0], [0.0, 1.0]).unwrap()
    }

    const TAIL_01: LocalDof = LocalDof {
        anchor: 0,
        other: 1,
        negated: false,
    };
    const HEAD_01: LocalDof = LocalDof {
        anchor: 1,
        other: 0,
        negated: true,
    };

    #[test]
    fn values_at_vertices() {
        let g = reference();
        // Tail slot of edge (0,1): grad(lambda_1) = (1,0) at its anchor,
        // zero at the other two vertices.
        assert_eq!(eval_basis(&g, TAIL_01, [0.0, 0.0]), [1.0, 0.0]);
        assert_eq!(eval_basis(&g, TAIL_01, [1.0, 0.0]), [0.0, 0.0]);
        assert_eq!(eval_basis(&g, TAIL_01, [0.0, 1.0]), [0.0, 0.0]);
        // Head slot: -grad(lambda_0) = (1,1) at vertex 1.
        assert_eq!(eval_basis(&g, HEAD_01, [1.0, 0.0]), [1.0, 1.0]);
        assert_eq!(eval_basis(&g, HEAD_01, [0.0, 0.0]), [0.0, 0.0]);
    }

    #[test]
    fn both_slots_share_the_element_curl() {
        let g = ElementGeometry::new([0.3, 0.1], [1.9, 0.7], [0.6, 2.2]).unwrap();
        for (a, b) in [(0, 1), (1, 2), (0, 2)] {
            let tail = LocalDof {
                anchor: a,
                other: b,
                negated: false,
            };
            let head = LocalDof {
                anchor: b,
                other: a,
                negated: true,
            };
            let ct = curl_basis(&g, tail);
            let ch = curl_basis(&g, head);
            assert!(
                (ct - ch).abs() < 1e-14 * ct.abs().max(1.0),
                "curls differ: {ct} vs {ch}"
            );
        }
        // On the reference triangle both curls of edge (0,1) equal 1.
        let g = reference();
        assert_eq!(curl_basis(&g, TAIL_01), 1.0);
        assert_eq!(curl_basis(&g, HEAD_01), 1.0);
    }

    #[test]
    fn tangential_trace_moments_on_reference_edge() {
        let g = reference();
        let (a, b) = ([0.0, 0.0], [1.0, 0.0]);
        let tangent = [1.0, 0.0];
        // Tail trace is 1 - s, head trace is s along the unit edge; both
        // integrate to 1/2, and their sum is identically one.
        let m_tail = edge_integrate(a, b, |p, _| dot(eval_basis(&g, TAIL_01, p), tangent));
        let m_head = edge_integrate(a, b, |p, _| dot(eval_basis(&g, HEAD_01, p), tangent));
        assert!((m_tail - 0.5).abs() < 1e-15);
        assert!((m_head - 0.5).abs() < 1e-15);
        for k in 0..=10 {
            let p = lerp(a, b, k as f64 / 10.0);
            let s = dot(eval_basis(&g, TAIL_01, p), tangent)
                + dot(eval_basis(&g, HEAD_01, p), tangent);
            assert!((s - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn constant_combined_trace_on_general_edges() {
        // On an arbitrary triangle, (tail + head) of an edge has tangential
        // trace 1/len along that edge, and each slot's trace vanishes on the
        // other edges.
        let g = ElementGeometry::new([0.4, -0.3], [2.0, 0.5], [0.9, 1.8]).unwrap();
        for (a, b) in [(0usize, 1usize), (1, 2), (0, 2)] {
            let tail = LocalDof {
                anchor: a,
                other: b,
                negated: false,
            };
            let head = LocalDof {
                anchor: b,
                other: a,
                negated: true,
            };
            let (pa, pb) = (g.verts[a], g.verts[b]);
            let len = crate::vec2::dist(pa, pb);
            let tangent = scale(1.0 / len, sub(pb, pa));
            for k in 1..10 {
                let p = lerp(pa, pb, k as f64 / 10.0);
                let s = dot(eval_basis(&g, tail, p), tangent) + dot(eval_basis(&g, head, p), tangent);
                assert!((s - 1.0 / len).abs() < 1e-13);
            }
            // The tail slot vanishes identically on the edge opposite its
            // anchor (lambda_anchor is zero there), edge (b, c).
            let c = 3 - a - b;
            let (ra, rb) = (g.verts[b], g.verts[c]);
            let t2 = scale(1.0 / crate::vec2::dist(ra, rb), sub(rb, ra));
            for k in 0..=10 {
                let p = lerp(ra, rb, k as f64 / 10.0);
                assert!(dot(eval_basis(&g, tail, p), t2).abs() < 1e-13);
            }
            // The head slot is anchored at b and is gradient of lambda_a
            // scaled; its trace on edge (a, c) must vanish too.
            let (sa, sb) = (g.verts[a], g.verts[c]);
            let t3 = scale(1.0 / crate::vec2::dist(sa, sb), sub(sb, sa));
            for k in 0..=10 {
                let p = lerp(sa, sb, k as f64 / 10.0);
                assert!(dot(eval_basis(&g, head, p), t3).abs() < 1e-13);
            }
        }
    }
}
