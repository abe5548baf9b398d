//! Assembly of the discrete bilinear forms and load vectors.
//!
//! The mass form uses the corner quadrature `sum_T (|T|/3) sum_corners` --
//! exact for products of per-element linear functions, and the source of the
//! block-diagonal mass structure: a basis function evaluated at a corner is
//! nonzero only when it is anchored there, where it equals (up to sign) the
//! gradient of the opposite barycentric coordinate.
//!
//! The curl-curl form integrates exactly: element curls are constant.  Loads
//! use quadrature of the appropriate order (degree-4 inside elements, four
//! Gauss points per boundary edge).
//!
//! Boundary data pairs with the *clockwise* tangential trace of the test
//! functions: with the domain on the left of the counter-clockwise boundary
//! cycle, the outward normal satisfies `n x z = -t_ccw`, which flips the
//! sign of edges whose lower-to-higher orientation runs counter-clockwise.

use crate::error::{Error, Result};
use crate::fem::basis::{curl_basis, eval_basis_bary};
use crate::fem::dofmap::{DofMap, DofVector};
use crate::fem::quad::{edge_integrate, TRI_DEG4};
use crate::mesh::Mesh;
use crate::vec2::{self, Vec2};

use super::blockdiag::{BlockDiagMatrix, BlockLayout};
use super::sparse::{SparseBuilder, SparseMatrix};

/// Assembles the corner-quadrature mass matrix with one weight per triangle
/// (for example `eps`, `sigma`, or `eps + tau sigma / 2`).
pub fn assemble_lumped_mass(
    mesh: &Mesh,
    map: &DofMap,
    weights: &[f64],
) -> Result<BlockDiagMatrix> {
    if weights.len() != mesh.n_triangles() {
        return Err(Error::Contract(format!(
            "{} weights for {} triangles",
            weights.len(),
            mesh.n_triangles()
        )));
    }
    let layout = BlockLayout::new(mesh, map)?;
    let mut m = BlockDiagMatrix::zeros(layout);
    for t in 0..mesh.n_triangles() {
        let geom = mesh.geometry(t);
        let scale = weights[t] * geom.area / 3.0;
        if scale == 0.0 {
            continue;
        }
        let dofs = map.element_dofs(mesh, t);
        // At corner `a` only the two slots anchored there survive, with
        // values sign * grad(other).
        for a in 0..3 {
            let anchored: Vec<(usize, Vec2)> = dofs
                .iter()
                .filter(|(_, ld)| ld.anchor == a)
                .map(|&(g, ld)| (g, vec2::scale(ld.sign(), geom.grads[ld.other])))
                .collect();
            for &(gi, vi) in &anchored {
                for &(gj, vj) in &anchored {
                    m.add(gi, gj, scale * vec2::dot(vi, vj));
                }
            }
        }
    }
    Ok(m)
}

/// Assembles the curl-curl stiffness matrix with one weight per triangle.
/// Works in the full and in the reduced space: a merged edge simply scatters
/// both of its slots onto the same unknown.
pub fn assemble_stiffness(mesh: &Mesh, map: &DofMap, weights: &[f64]) -> Result<SparseMatrix> {
    if weights.len() != mesh.n_triangles() {
        return Err(Error::Contract(format!(
            "{} weights for {} triangles",
            weights.len(),
            mesh.n_triangles()
        )));
    }
    let n = map.n_dofs();
    let mut b = SparseBuilder::new(n, n);
    for t in 0..mesh.n_triangles() {
        let geom = mesh.geometry(t);
        let scale = weights[t] * geom.area;
        let dofs = map.element_dofs(mesh, t);
        let curls: Vec<(usize, f64)> = dofs
            .iter()
            .map(|&(g, ld)| (g, curl_basis(geom, ld)))
            .collect();
        for &(gi, ci) in &curls {
            for &(gj, cj) in &curls {
                b.add(gi, gj, scale * ci * cj);
            }
        }
    }
    Ok(b.build())
}

/// Assembles the volume load `(f, phi_i)` with a degree-4 rule per element.
pub fn assemble_volume_load(
    mesh: &Mesh,
    map: &DofMap,
    mut f: impl FnMut(Vec2) -> Vec2,
) -> DofVector {
    let mut out = DofVector::zeros(map);
    for t in 0..mesh.n_triangles() {
        let geom = mesh.geometry(t);
        let dofs = map.element_dofs(mesh, t);
        for (l, w) in TRI_DEG4 {
            let fx = f(geom.point(l));
            let scale = w * geom.area;
            for &(g, ld) in &dofs {
                out.data[g] += scale * vec2::dot(fx, eval_basis_bary(geom, ld, l));
            }
        }
    }
    out
}

/// Assembles the boundary load `(g, phi_i . t_cw)` over the outer boundary.
pub fn assemble_boundary_load(
    mesh: &Mesh,
    map: &DofMap,
    mut g: impl FnMut(Vec2) -> f64,
) -> Result<DofVector> {
    let mut out = DofVector::zeros(map);
    for e in 0..mesh.n_edges() {
        if !mesh.edges[e].is_boundary() {
            continue;
        }
        let a = mesh.vertices[mesh.edges[e].verts[0]];
        let b = mesh.vertices[mesh.edges[e].verts[1]];
        let len = vec2::dist(a, b);
        // Lower-to-higher tangential traces are (1 - s)/len (tail) and
        // s/len (head); the clockwise pairing negates counter-clockwise
        // oriented edges.
        let sign = if mesh.boundary_edge_is_ccw(e)? { -1.0 } else { 1.0 };
        let tail = edge_integrate(a, b, |p, s| g(p) * (1.0 - s) / len);
        let head = edge_integrate(a, b, |p, s| g(p) * s / len);
        let (first, second) = map.edge_dofs(e);
        out.data[first] += sign * tail;
        out.data[second.unwrap_or(first)] += sign * head;
    }
    Ok(out)
}
