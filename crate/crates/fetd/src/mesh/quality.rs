//! Element shape/size measures used by the mesh generator and by tests that
//! reason about the explicit-stepping stability limit.

use crate::fem::geometry::ElementGeometry;
use crate::vec2::dot;

/// The single-element bound that controls the explicit time-step restriction
/// for unit materials: `3 * sum_a |grad(lambda_a)|^2`.
///
/// For one isolated element with unit coefficients, the stiffness/mass pencil
/// has largest eigenvalue exactly this value, so the mesh-wide maximum bounds
/// the global pencil eigenvalue from above (element-by-element summation of
/// both forms).  Small or badly shaped triangles have a large bound; the
/// stable step scales like `sqrt(2 / bound)`.
pub fn stability_bound(geom: &ElementGeometry) -> f64 {
    3.0 * geom.grads.iter().map(|g| dot(*g, *g)).sum::<f64>()
}

/// Scale-free shape quality in (0, 1]: `4 sqrt(3) area / sum(edge^2)`, equal
/// to one exactly for equilateral triangles.
pub fn shape_quality(geom: &ElementGeometry) -> f64 {
    let mut sum_sq = 0.0;
    for a in 0..3 {
        let e = crate::vec2::sub(geom.verts[(a + 1) % 3], geom.verts[a]);
        sum_sq += dot(e, e);
    }
    4.0 * 3.0_f64.sqrt() * geom.area / sum_sq
}
