//! Selection of the edges whose two degrees of freedom are merged into one.
//!
//! Merging is only exact where the data seen by an edge's basis functions is
//! smooth.  The policies below encode the safe choices:
//!
//! * [`ReductionPolicy::None`] — keep two unknowns everywhere (the full
//!   two-per-edge space);
//! * [`ReductionPolicy::SigmaContinuous`] — merge except on interior edges
//!   where the conductivity jumps between the two adjacent triangles and on
//!   boundary edges with nonzero conductivity;
//! * [`ReductionPolicy::SourceAware`] — additionally keep interior edges
//!   where the volume source jumps and boundary edges where boundary data is
//!   active (required when the reduced right-hand side is assembled directly
//!   on the merged basis);
//! * [`ReductionPolicy::All`] — merge every edge (one unknown per edge, the
//!   classical lowest-order edge space).

use super::{material::MaterialField, Mesh};
use crate::error::{Error, Result};

/// Which edges are reduced (single unknown) for a given run.
#[derive(Debug, Clone)]
pub struct ReducedEdgeSet {
    /// `reduced[e]` is true when edge `e` carries a single unknown.
    pub reduced: Vec<bool>,
    /// Number of reduced edges.
    pub count: usize,
}

impl ReducedEdgeSet {
    pub fn none(mesh: &Mesh) -> Self {
        Self {
            reduced: vec![false; mesh.n_edges()],
            count: 0,
        }
    }

    pub fn is_reduced(&self, e: usize) -> bool {
        self.reduced[e]
    }
}

/// Edge-selection policy; see the module docs.
pub enum ReductionPolicy<'a> {
    None,
    All,
    SigmaContinuous,
    SourceAware {
        /// True for interior edges across which the volume source jumps.
        f_jumps: &'a dyn Fn(usize) -> bool,
        /// True for boundary edges where the boundary data is not
        /// identically zero over the run.
        g_active: &'a dyn Fn(usize) -> bool,
    },
}

/// Classifies every edge under `policy`.
pub fn classify_reduced_edges(
    mesh: &Mesh,
    materials: &MaterialField,
    policy: &ReductionPolicy,
) -> Result<ReducedEdgeSet> {
    if materials.len() != mesh.n_triangles() {
        return Err(Error::Contract(format!(
            "material field covers {} triangles, mesh has {}",
            materials.len(),
            mesh.n_triangles()
        )));
    }
    let mut reduced = vec![false; mesh.n_edges()];
    for (e, edge) in mesh.edges.iter().enumerate() {
        let keep_both = match policy {
            ReductionPolicy::None => true,
            ReductionPolicy::All => false,
            ReductionPolicy::SigmaContinuous => sigma_discontinuous(mesh, materials, e),
            ReductionPolicy::SourceAware { f_jumps, g_active } => {
                sigma_discontinuous(mesh, materials, e)
                    || (!edge.is_boundary() && f_jumps(e))
                    || (edge.is_boundary() && g_active(e))
            }
        };
        reduced[e] = !keep_both;
    }
    let count = reduced.iter().filter(|&&r| r).count();
    Ok(ReducedEdgeSet { reduced, count })
}

fn sigma_discontinuous(mesh: &Mesh, materials: &MaterialField, e: usize) -> bool {
    let edge = &mesh.edges[e];
    let t0 = edge.tris[0].expect("every edge has at least one triangle");
    match edge.tris[1] {
        Some(t1) => materials.sigma[t0] != materials.sigma[t1],
        // Boundary edge: the quadratic damping form pairs interior values
        // against an implicit zero outside, so any nonzero sigma is a jump.
        None => materials.sigma[t0] != 0.0,
    }
}
