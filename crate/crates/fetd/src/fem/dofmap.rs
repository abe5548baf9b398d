//! Global degree-of-freedom numbering.
//!
//! Every mesh edge owns either two unknowns (the tail slot anchored at the
//! lower-numbered endpoint, then the head slot anchored at the higher one) or
//! a single merged unknown that drives both slots with the same coefficient.
//! Numbering walks the edge table in order, so dof ids are deterministic for
//! a given mesh and merge set.

use crate::error::{Error, Result};
use crate::mesh::{classify::ReducedEdgeSet, Mesh};

use super::basis::LocalDof;

/// Which unknown layout a vector or map lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    /// Two unknowns on every edge.
    Full,
    /// One unknown on merged edges, two on the rest.
    Reduced,
}

/// Edge-to-dof numbering for one mesh and merge set.
#[derive(Debug, Clone)]
pub struct DofMap {
    space: Space,
    /// First dof id of each edge.
    edge_start: Vec<usize>,
    /// Whether each edge carries a single merged unknown.
    merged: Vec<bool>,
    n_dofs: usize,
}

impl DofMap {
    /// The full layout: dofs `2e` (tail) and `2e + 1` (head) for edge `e`.
    pub fn full(mesh: &Mesh) -> Self {
        let ne = mesh.n_edges();
        Self {
            space: Space::Full,
            edge_start: (0..ne).map(|e| 2 * e).collect(),
            merged: vec![false; ne],
            n_dofs: 2 * ne,
        }
    }

    /// The reduced layout induced by `set`.
    pub fn reduced(mesh: &Mesh, set: &ReducedEdgeSet) -> Self {
        let ne = mesh.n_edges();
        assert_eq!(set.reduced.len(), ne, "merge set built for another mesh");
        let mut edge_start = Vec::with_capacity(ne);
        let mut next = 0;
        for e in 0..ne {
            edge_start.push(next);
            next += if set.reduced[e] { 1 } else { 2 };
        }
        Self {
            space: Space::Reduced,
            edge_start,
            merged: set.reduced.clone(),
            n_dofs: next,
        }
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    pub fn n_edges(&self) -> usize {
        self.merged.len()
    }

    pub fn is_merged(&self, e: usize) -> bool {
        self.merged[e]
    }

    /// Dofs of edge `e`: `(tail_or_merged, Some(head))` for a two-dof edge,
    /// `(merged, None)` otherwise.
    pub fn edge_dofs(&self, e: usize) -> (usize, Option<usize>) {
        let s = self.edge_start[e];
        if self.merged[e] {
            (s, None)
        } else {
            (s, Some(s + 1))
        }
    }

    /// The six local slots of triangle `t` with their global dof ids.  A
    /// merged edge contributes the same global id for both of its slots.
    pub fn element_dofs(&self, mesh: &Mesh, t: usize) -> [(usize, LocalDof); 6] {
        let tri = mesh.triangles[t];
        let mut out = [(0usize, LocalDof { anchor: 0, other: 0, negated: false }); 6];
        for k in 0..3 {
            let (la, lb) = (k, (k + 1) % 3);
            let e = mesh.tri_edges[t][k];
            let (lo, hi) = if tri[la] < tri[lb] { (la, lb) } else { (lb, la) };
            let (first, second) = self.edge_dofs(e);
            out[2 * k] = (
                first,
                LocalDof { anchor: lo, other: hi, negated: false },
            );
            out[2 * k + 1] = (
                second.unwrap_or(first),
                LocalDof { anchor: hi, other: lo, negated: true },
            );
        }
        out
    }
}

/// A coefficient vector tagged with the layout it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct DofVector {
    pub space: Space,
    pub data: Vec<f64>,
}

impl DofVector {
    pub fn zeros(map: &DofMap) -> Self {
        Self {
            space: map.space(),
            data: vec![0.0; map.n_dofs()],
        }
    }

    pub fn from_data(map: &DofMap, data: Vec<f64>) -> Result<Self> {
        if data.len() != map.n_dofs() {
            return Err(Error::Contract(format!(
                "vector length {} does not match the {} dofs of the map",
                data.len(),
                map.n_dofs()
            )));
        }
        Ok(Self {
            space: map.space(),
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Checks that the vector can be used with `map`.
    pub fn check(&self, map: &DofMap) -> Result<()> {
        if self.space != map.space() || self.len() != map.n_dofs() {
            return Err(Error::Contract(format!(
                "vector in {:?} space of length {} used with a {:?} map of {} dofs",
                self.space,
                self.len(),
                map.space(),
                map.n_dofs()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::classify::{classify_reduced_edges, ReductionPolicy};
    use crate::mesh::material::MaterialField;
    use crate::mesh::testmesh;

    #[test]
    fn full_layout_numbers_two_per_edge() {
        let m = testmesh::two_triangles();
        let map = DofMap::full(&m);
        assert_eq!(map.n_dofs(), 2 * m.n_edges());
        for e in 0..m.n_edges() {
            assert_eq!(map.edge_dofs(e), (2 * e, Some(2 * e + 1)));
        }
    }

    #[test]
    fn element_slots_anchor_at_the_lower_global_endpoint() {
        let m = testmesh::unit_square(2);
        let map = DofMap::full(&m);
        for t in 0..m.n_triangles() {
            let tri = m.triangles[t];
            for (i, (g, ld)) in map.element_dofs(&m, t).iter().enumerate() {
                let k = i / 2;
                let e = m.tri_edges[t][k];
                let (lo, hi) = (m.edges[e].verts[0], m.edges[e].verts[1]);
                if i % 2 == 0 {
                    assert_eq!(*g, 2 * e);
                    assert_eq!(tri[ld.anchor], lo);
                    assert_eq!(tri[ld.other], hi);
                    assert!(!ld.negated);
                } else {
                    assert_eq!(*g, 2 * e + 1);
                    assert_eq!(tri[ld.anchor], hi);
                    assert_eq!(tri[ld.other], lo);
                    assert!(ld.negated);
                }
            }
        }
    }

    #[test]
    fn reduced_layout_counts_and_shared_ids() {
        let mut m = testmesh::two_triangles();
        m.labels[1] = 1;
        let mat =
            MaterialField::from_labels(&m, |l| if l == 1 { (1.0, 2.0, 1.0) } else { (1.0, 0.0, 1.0) })
                .unwrap();
        let set = classify_reduced_edges(&m, &mat, &ReductionPolicy::SigmaContinuous).unwrap();
        let map = DofMap::reduced(&m, &set);
        assert_eq!(map.n_dofs(), 2 * m.n_edges() - set.count);

        for t in 0..m.n_triangles() {
            for (i, (g, _)) in map.element_dofs(&m, t).iter().enumerate() {
                let e = m.tri_edges[t][i / 2];
                let (first, second) = map.edge_dofs(e);
                if map.is_merged(e) {
                    assert_eq!(*g, first);
                    assert!(second.is_none());
                } else {
                    assert_eq!(*g, first + (i % 2));
                }
            }
        }

        let all = classify_reduced_edges(&m, &mat, &ReductionPolicy::All).unwrap();
        assert_eq!(DofMap::reduced(&m, &all).n_dofs(), m.n_edges());
    }

    #[test]
    fn vectors_are_checked_against_maps() {
        let m = testmesh::two_triangles();
        let full = DofMap::full(&m);
        let v = DofVector::zeros(&full);
        assert!(v.check(&full).is_ok());

        let all = ReducedEdgeSet {
            reduced: vec![true; m.n_edges()],
            count: m.n_edges(),
        };
        let red = DofMap::reduced(&m, &all);
        assert!(v.check(&red).is_err());
        assert!(DofVector::from_data(&red, vec![0.0; 3]).is_err());
    }
}
