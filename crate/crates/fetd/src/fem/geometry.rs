//! Affine geometry of a single triangle: signed area, barycentric
//! coordinates and their (constant) gradients.

use crate::error::{Error, Result};
use crate::vec2::{cross, sub, Vec2};

/// Precomputed geometry of one triangle.
///
/// Everything downstream (basis evaluation, quadrature, assembly) works off
/// this struct, so it is computed once per element and reused.
#[derive(Debug, Clone)]
pub struct ElementGeometry {
    /// Vertex coordinates in counter-clockwise order.
    pub verts: [Vec2; 3],
    /// Area (positive; construction fails for clockwise or degenerate input).
    pub area: f64,
    /// Gradients of the three barycentric coordinate functions.
    pub grads: [Vec2; 3],
}

/// Relative tolerance (on `area / diameter^2`) below which a triangle is
/// treated as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-14;

impl ElementGeometry {
    /// Builds the geometry for the triangle `(p0, p1, p2)`.
    ///
    /// Fails if the vertices are clockwise or collinear to within
    /// [`DEGENERACY_TOL`] relative to the squared diameter.
    pub fn new(p0: Vec2, p1: Vec2, p2: Vec2) -> Result<Self> {
        let two_area = cross(sub(p1, p0), sub(p2, p0));
        let diam_sq = [sub(p1, p0), sub(p2, p1), sub(p0, p2)]
            .iter()
            .map(|e| e[0] * e[0] + e[1] * e[1])
            .fold(0.0_f64, f64::max);
        if two_area <= DEGENERACY_TOL * diam_sq {
            return Err(Error::InvalidMesh(format!(
                "degenerate or inverted triangle: signed area {:.3e}, squared diameter {:.3e}",
                0.5 * two_area,
                diam_sq
            )));
        }
        let verts = [p0, p1, p2];
        // grad(lambda_a) is the opposite edge vector rotated by +90 degrees,
        // scaled by 1 / (2 area).
        let mut grads = [[0.0; 2]; 3];
        for a in 0..3 {
            let e = sub(verts[(a + 2) % 3], verts[(a + 1) % 3]);
            grads[a] = [-e[1] / two_area, e[0] / two_area];
        }
        Ok(Self {
            verts,
            area: 0.5 * two_area,
            grads,
        })
    }

    /// Barycentric coordinates of `p` (components sum to one; negative
    /// components mean `p` lies outside the triangle).
    pub fn barycentric(&self, p: Vec2) -> [f64; 3] {
        let two_area = 2.0 * self.area;
        let mut l = [0.0; 3];
        for a in 0..3 {
            l[a] = cross(
                sub(self.verts[(a + 1) % 3], p),
                sub(self.verts[(a + 2) % 3], p),
            ) / two_area;
        }
        l
    }

    /// Cartesian point for barycentric coordinates `l`.
    pub fn point(&self, l: [f64; 3]) -> Vec2 {
        [
            l[0] * self.verts[0][0] + l[1] * self.verts[1][0] + l[2] * self.verts[2][0],
            l[0] * self.verts[0][1] + l[1] * self.verts[1][1] + l[2] * self.verts[2][1],
        ]
    }

    /// Centroid of the triangle.
    pub fn centroid(&self) -> Vec2 {
        self.point([1.0 / 3.0; 3])
    }

    /// Longest edge length.
    pub fn diameter(&self) -> f64 {
        (0..3)
            .map(|a| {
                let e = sub(self.verts[(a + 1) % 3], self.verts[a]);
                (e[0] * e[0] + e[1] * e[1]).sqrt()
            })
            .fold(0.0_f64, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vec2::{add, dot};

    /// The unit reference triangle (0,0), (1,0), (0,1).
    pub fn reference() -> ElementGeometry {
        ElementGeometry::new([0.0, 0.0], [1.0, 0.0], [0.0, 1.0]).unwrap()
    }

    #[test]
    fn reference_triangle_hand_values() {
        let g = reference();
        assert_eq!(g.area, 0.5);
        assert_eq!(g.grads[0], [-1.0, -1.0]);
        assert_eq!(g.grads[1], [1.0, 0.0]);
        assert_eq!(g.grads[2], [0.0, 1.0]);
    }

    #[test]
    fn barycentric_at_vertices_and_centroid() {
        let g = ElementGeometry::new([0.2, -0.1], [1.3, 0.4], [0.5, 1.7]).unwrap();
        for a in 0..3 {
            let l = g.barycentric(g.verts[a]);
            for b in 0..3 {
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((l[b] - want).abs() < 1e-14);
            }
        }
        let l = g.barycentric(g.centroid());
        for v in l {
            assert!((v - 1.0 / 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn gradients_sum_to_zero_and_match_finite_differences() {
        let g = ElementGeometry::new([-0.3, 0.9], [2.1, 1.1], [0.4, 3.0]).unwrap();
        let s = add(add(g.grads[0], g.grads[1]), g.grads[2]);
        assert!(s[0].abs() < 1e-14 && s[1].abs() < 1e-14);
        // lambda_a is linear, so a one-step difference quotient is exact.
        let p = [0.5, 1.2];
        let h = 0.25;
        for a in 0..3 {
            let dx = (g.barycentric(add(p, [h, 0.0]))[a] - g.barycentric(p)[a]) / h;
            let dy = (g.barycentric(add(p, [0.0, h]))[a] - g.barycentric(p)[a]) / h;
            assert!((dx - g.grads[a][0]).abs() < 1e-12);
            assert!((dy - g.grads[a][1]).abs() < 1e-12);
        }
        // Gradient of lambda_a is orthogonal to the opposite edge.
        for a in 0..3 {
            let e = sub(g.verts[(a + 2) % 3], g.verts[(a + 1) % 3]);
            assert!(dot(g.grads[a], e).abs() < 1e-13);
        }
    }

    #[test]
    fn rejects_clockwise_and_degenerate() {
        assert!(ElementGeometry::new([0.0, 0.0], [0.0, 1.0], [1.0, 0.0]).is_err());
        assert!(ElementGeometry::new([0.0, 0.0], [1.0, 0.0], [2.0, 0.0]).is_err());
        // Barely non-degenerate relative to its diameter must still pass.
        assert!(ElementGeometry::new([0.0, 0.0], [1.0, 0.0], [0.5, 1e-9]).is_ok());
    }
}
