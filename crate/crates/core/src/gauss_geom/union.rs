//! Unions of triangles: slicing and constrained pair sampling.

use rand::Rng;

use super::interval::{Interval, IntervalUnion};
use super::normal::sample_truncated_normal;
use super::triangle::{orient, triangle_mass, Point2, Triangle};
use crate::error::{invalid, Error, Result};

/// Triangles with pairwise disjoint interiors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleUnion {
    triangles: Vec<Triangle>,
}

impl TriangleUnion {
    /// Build a union, rejecting overlaps of positive area.
    pub fn new(triangles: Vec<Triangle>) -> Result<Self> {
        for i in 0..triangles.len() {
            for j in (i + 1)..triangles.len() {
                let ov = overlap_area(&triangles[i], &triangles[j]);
                let scale = triangles[i].area().min(triangles[j].area());
                if ov > 1e-9 * scale.max(1e-12) {
                    return Err(invalid(format!("triangles {i} and {j} overlap (area {ov:e})")));
                }
            }
        }
        Ok(TriangleUnion { triangles })
    }

    /// Skip the overlap check for triangles disjoint by construction.
    pub(crate) fn from_disjoint(triangles: Vec<Triangle>) -> Self {
        TriangleUnion { triangles }
    }

    pub fn triangles(&self) -> &[Triangle] {
        &self.triangles
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn contains(&self, p: Point2) -> bool {
        self.triangles.iter().any(|t| t.contains(p))
    }

    /// Index of the first (lowest-indexed) triangle containing `p`.
    pub fn locate(&self, p: Point2) -> Option<usize> {
        self.triangles.iter().position(|t| t.contains(p))
    }

    /// `{u : (u, v) in union}` as merged disjoint intervals.
    pub fn slice_u(&self, v: f64) -> IntervalUnion {
        IntervalUnion::from_intervals(
            self.triangles
                .iter()
                .filter_map(|t| t.slice_at_y(v))
                .map(|(a, b)| Interval::new(a, b)),
        )
    }

    /// `{v : (u, v) in union}` as merged disjoint intervals.
    pub fn slice_v(&self, u: f64) -> IntervalUnion {
        IntervalUnion::from_intervals(
            self.triangles
                .iter()
                .filter_map(|t| t.slice_at_x(u))
                .map(|(a, b)| Interval::new(a, b)),
        )
    }

    /// Standard bivariate Gaussian mass of the union.
    pub fn mass(&self) -> f64 {
        self.triangles.iter().map(triangle_mass).sum()
    }

    pub fn area(&self) -> f64 {
        self.triangles.iter().map(Triangle::area).sum()
    }
}

/// Area of the intersection of two triangles (convex clipping).
fn overlap_area(a: &Triangle, b: &Triangle) -> f64 {
    let (alo, ahi) = a.bbox();
    let (blo, bhi) = b.bbox();
    if alo.x >= bhi.x || blo.x >= ahi.x || alo.y >= bhi.y || blo.y >= ahi.y {
        return 0.0;
    }
    let mut poly: Vec<Point2> = a.vertices().to_vec();
    let bv = b.vertices();
    for k in 0..3 {
        let (p, q) = (bv[k], bv[(k + 1) % 3]);
        poly = clip_half_plane(&poly, |x| orient(p, q, x));
        if poly.len() < 3 {
            return 0.0;
        }
    }
    polygon_area(&poly)
}

/// Sutherland-Hodgman step keeping the part where `side(x) >= 0`.
pub(crate) fn clip_half_plane(poly: &[Point2], side: impl Fn(Point2) -> f64) -> Vec<Point2> {
    let n = poly.len();
    let mut out = Vec::with_capacity(n + 2);
    for i in 0..n {
        let (p, q) = (poly[i], poly[(i + 1) % n]);
        let (sp, sq) = (side(p), side(q));
        if sp >= 0.0 {
            out.push(p);
        }
        if (sp >= 0.0) != (sq >= 0.0) {
            let t = sp / (sp - sq);
            out.push(p + (q - p) * t);
        }
    }
    out
}

/// Signed shoelace area of a polygon.
pub(crate) fn polygon_area(poly: &[Point2]) -> f64 {
    let n = poly.len();
    0.5 * (0..n).map(|i| poly[i].cross(poly[(i + 1) % n])).sum::<f64>()
}

/// Draw a point of `N(means, diag(sds^2))` restricted to `tu` by coordinate
/// Gibbs sweeps started at the feasible point `start`.
///
/// Each sweep resamples `u` on the horizontal slice through the current
/// point, then `v` on the vertical slice. A coordinate whose slice has no
/// Gaussian mass (only possible on measure-zero slivers) keeps its value.
pub fn sample_pair_in_union<R: Rng + ?Sized>(
    tu: &TriangleUnion,
    means: (f64, f64),
    sds: (f64, f64),
    start: Point2,
    sweeps: usize,
    rng: &mut R,
) -> Result<Point2> {
    if !tu.contains(start) {
        return Err(Error::InfeasibleStart(start.x, start.y));
    }
    gibbs_sweeps(tu, means, sds, start, sweeps, rng)
}

/// Coordinate sweeps without the membership check on `start`.
pub(crate) fn gibbs_sweeps<R: Rng + ?Sized>(
    tu: &TriangleUnion,
    means: (f64, f64),
    sds: (f64, f64),
    start: Point2,
    sweeps: usize,
    rng: &mut R,
) -> Result<Point2> {
    let mut p = start;
    for _ in 0..sweeps {
        match sample_truncated_normal(means.0, sds.0, &tu.slice_u(p.y), rng) {
            Ok(u) => p.x = u,
            Err(Error::EmptyDomain) => {}
            Err(e) => return Err(e),
        }
        match sample_truncated_normal(means.1, sds.1, &tu.slice_v(p.x), rng) {
            Ok(v) => p.y = v,
            Err(Error::EmptyDomain) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(p)
}
