//! Quadrature rules.
//!
//! Three fixed rules cover all needs of the solver:
//!
//! * the **vertex rule** `|T|/3 * sum over vertices` — the lumped inner
//!   product that produces block-diagonal mass matrices; it is exact whenever
//!   the integrand is linear on the element,
//! * a 4-point **Gauss–Legendre rule on edges** (exact to degree 7) for
//!   tangential-trace moments and boundary loads,
//! * a 6-point **degree-4 triangle rule** for volume load integrals.
//!
//! For test oracles that need "exact" integrals of non-polynomial functions,
//! [`tri_integrate_refined`] applies the degree-4 rule on a uniformly
//! subdivided element.

use crate::fem::geometry::ElementGeometry;
use crate::vec2::{lerp, Vec2};

/// Gauss–Legendre nodes on [-1, 1], 4 points.
const GL4_X: [f64; 4] = [
    -0.861_136_311_594_052_6,
    -0.339_981_043_584_856_3,
    0.339_981_043_584_856_3,
    0.861_136_311_594_052_6,
];
const GL4_W: [f64; 4] = [
    0.347_854_845_137_453_86,
    0.652_145_154_862_546_1,
    0.652_145_154_862_546_1,
    0.347_854_845_137_453_86,
];

/// 4-point Gauss–Legendre nodes and weights on [0, 1].
///
/// Weights sum to one; integrals over a segment of length `L` need an extra
/// factor `L`.
pub fn edge_rule() -> [(f64, f64); 4] {
    let mut out = [(0.0, 0.0); 4];
    for i in 0..4 {
        out[i] = (0.5 * (1.0 + GL4_X[i]), 0.5 * GL4_W[i]);
    }
    out
}

/// Integrates `f` along the segment from `a` to `b` (with respect to arc
/// length) using the 4-point Gauss rule.
pub fn edge_integrate(a: Vec2, b: Vec2, mut f: impl FnMut(Vec2, f64) -> f64) -> f64 {
    let len = crate::vec2::dist(a, b);
    let mut acc = 0.0;
    for (t, w) in edge_rule() {
        acc += w * f(lerp(a, b, t), t);
    }
    acc * len
}

/// Degree-4 triangle rule: barycentric coordinates and weights (weights sum
/// to one; multiply by the element area).
pub const TRI_DEG4: [([f64; 3], f64); 6] = {
    const A: f64 = 0.445_948_490_915_965;
    const B: f64 = 0.091_576_213_509_771;
    const WA: f64 = 0.223_381_589_678_011;
    const WB: f64 = 0.109_951_743_655_322;
    [
        ([1.0 - 2.0 * A, A, A], WA),
        ([A, 1.0 - 2.0 * A, A], WA),
        ([A, A, 1.0 - 2.0 * A], WA),
        ([1.0 - 2.0 * B, B, B], WB),
        ([B, 1.0 - 2.0 * B, B], WB),
        ([B, B, 1.0 - 2.0 * B], WB),
    ]
};

/// Midpoint (degree-2) triangle rule: evaluation at the three edge midpoints
/// with equal weights.  Exact for quadratics, which makes it an *exact* rule
/// for L2 norms of piecewise-linear fields.
pub const TRI_MIDEDGE: [([f64; 3], f64); 3] = [
    ([0.5, 0.5, 0.0], 1.0 / 3.0),
    ([0.0, 0.5, 0.5], 1.0 / 3.0),
    ([0.5, 0.0, 0.5], 1.0 / 3.0),
];

/// Integrates `f` over the element with the degree-4 rule.
pub fn tri_integrate(geom: &ElementGeometry, mut f: impl FnMut(Vec2) -> f64) -> f64 {
    let mut acc = 0.0;
    for (bary, w) in TRI_DEG4 {
        acc += w * f(geom.point(bary));
    }
    acc * geom.area
}

/// Integrates `f` over the element with the midpoint rule (exact for
/// quadratic integrands).
pub fn tri_integrate_quadratic(geom: &ElementGeometry, mut f: impl FnMut(Vec2) -> f64) -> f64 {
    let mut acc = 0.0;
    for (bary, w) in TRI_MIDEDGE {
        acc += w * f(geom.point(bary));
    }
    acc * geom.area
}

/// High-accuracy oracle: uniformly subdivides the element `levels` times
/// (4^levels congruent children) and applies the degree-4 rule on each child.
pub fn tri_integrate_refined(
    geom: &ElementGeometry,
    levels: u32,
    f: &mut impl FnMut(Vec2) -> f64,
) -> f64 {
    fn go(p0: Vec2, p1: Vec2, p2: Vec2, levels: u32, f: &mut impl FnMut(Vec2) -> f64) -> f64 {
        if levels == 0 {
            let geom = ElementGeometry::new(p0, p1, p2).expect("subdivision kept orientation");
            return tri_integrate(&geom, f);
        }
        let m01 = crate::vec2::midpoint(p0, p1);
        let m12 = crate::vec2::midpoint(p1, p2);
        let m20 = crate::vec2::midpoint(p2, p0);
        go(p0, m01, m20, levels - 1, f)
            + go(m01, p1, m12, levels - 1, f)
            + go(m20, m12, p2, levels - 1, f)
            + go(m01, m12, m20, levels - 1, f)
    }
    go(geom.verts[0], geom.verts[1], geom.verts[2], levels, f)
}
