//! Point evaluation of discrete fields.

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::vec2::{self, Vec2};

use super::basis::{curl_basis, eval_basis};
use super::dofmap::{DofMap, DofVector};

/// Barycentric slack accepted when locating a point in an element.
const LOCATE_TOL: f64 = 1e-10;

/// Evaluates the field inside triangle `t`.
pub fn eval_in_element(
    mesh: &Mesh,
    map: &DofMap,
    u: &DofVector,
    t: usize,
    p: Vec2,
) -> Vec2 {
    let geom = mesh.geometry(t);
    let mut val = [0.0, 0.0];
    for (g, ld) in map.element_dofs(mesh, t) {
        val = vec2::add(val, vec2::scale(u.data[g], eval_basis(geom, ld, p)));
    }
    val
}

/// The (constant) curl of the field on triangle `t`.
pub fn curl_in_element(mesh: &Mesh, map: &DofMap, u: &DofVector, t: usize) -> f64 {
    let geom = mesh.geometry(t);
    map.element_dofs(mesh, t)
        .iter()
        .map(|&(g, ld)| u.data[g] * curl_basis(geom, ld))
        .sum()
}

/// Per-element curls of the whole field.
pub fn curl_field(mesh: &Mesh, map: &DofMap, u: &DofVector) -> Vec<f64> {
    (0..mesh.n_triangles())
        .map(|t| curl_in_element(mesh, map, u, t))
        .collect()
}

/// Finds a triangle containing `p` (linear scan; first hit wins).
pub fn locate(mesh: &Mesh, p: Vec2) -> Result<usize> {
    for t in 0..mesh.n_triangles() {
        let l = mesh.geometry(t).barycentric(p);
        if l.iter().all(|&c| c >= -LOCATE_TOL) {
            return Ok(t);
        }
    }
    Err(Error::Contract(format!(
        "point ({}, {}) lies outside the mesh",
        p[0], p[1]
    )))
}

/// Evaluates the field at an arbitrary point of the domain.  On edges the
/// tangential component is well defined but the normal one may jump; the
/// value from the first containing element found is returned.
pub fn eval_at_point(mesh: &Mesh, map: &DofMap, u: &DofVector, p: Vec2) -> Result<Vec2> {
    u.check(map)?;
    Ok(eval_in_element(mesh, map, u, locate(mesh, p)?, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::dofmap::DofMap;
    use crate::fem::interp::interpolate;
    use crate::mesh::testmesh;

    #[test]
    fn linear_field_evaluates_everywhere() {
        let mesh = testmesh::unit_square(2);
        let map = DofMap::full(&mesh);
        let field = |p: [f64; 2]| [1.0 + 2.0 * p[1], 3.0 - p[0]];
        let u = interpolate(&mesh, &map, field);
        for p in [[0.1, 0.2], [0.65, 0.4], [0.99, 0.99], [0.5, 0.5]] {
            let got = eval_at_point(&mesh, &map, &u, p).unwrap();
            assert!(vec2::dist(got, field(p)) < 1e-13);
        }
        assert!(eval_at_point(&mesh, &map, &u, [1.5, 0.5]).is_err());
    }

    #[test]
    fn curl_of_a_rotational_field_is_constant_and_exact() {
        // v = (-y, x) has curl 2 and is linear, hence in the space.
        let mesh = testmesh::unit_square(3);
        let map = DofMap::full(&mesh);
        let u = interpolate(&mesh, &map, |p| [-p[1], p[0]]);
        for c in curl_field(&mesh, &map, &u) {
            assert!((c - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_fields_are_curl_free() {
        // v = grad(x^2/2 + x y) = (x + y, x) is linear with curl 0.
        let mesh = testmesh::unit_square(2);
        let map = DofMap::full(&mesh);
        let u = interpolate(&mesh, &map, |p| [p[0] + p[1], p[0]]);
        for c in curl_field(&mesh, &map, &u) {
            assert!(c.abs() < 1e-12);
        }
    }
}
