//! Convex polygons with axis-parallel line slices.

use super::triangle::{slice_polygon, Point2};

#[derive(Clone, Debug, PartialEq)]
pub struct ConvexPolygon {
    v: Vec<Point2>,
    lo: Point2,
    hi: Point2,
}

impl ConvexPolygon {
    /// `None` for fewer than three vertices. Convexity is the caller's
    /// responsibility.
    pub fn new(v: Vec<Point2>) -> Option<Self> {
        if v.len() < 3 {
            return None;
        }
        let lo = v.iter().fold(Point2::new(f64::INFINITY, f64::INFINITY), |a, p| {
            Point2::new(a.x.min(p.x), a.y.min(p.y))
        });
        let hi = v
            .iter()
            .fold(Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY), |a, p| {
                Point2::new(a.x.max(p.x), a.y.max(p.y))
            });
        Some(ConvexPolygon { v, lo, hi })
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.v
    }

    #[inline]
    pub fn slice_at_y(&self, v: f64) -> Option<(f64, f64)> {
        if v < self.lo.y || v > self.hi.y {
            return None;
        }
        slice_polygon(&self.v, v, |p| (p.x, p.y))
    }

    #[inline]
    pub fn slice_at_x(&self, u: f64) -> Option<(f64, f64)> {
        if u < self.lo.x || u > self.hi.x {
            return None;
        }
        slice_polygon(&self.v, u, |p| (p.y, p.x))
    }
}
