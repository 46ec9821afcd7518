//! Triangles in latent space and their standard bivariate Gaussian mass.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::normal::std_normal_sf;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn dot(self, o: Point2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Point2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist2(self, o: Point2) -> f64 {
        let (dx, dy) = (self.x - o.x, self.y - o.y);
        dx * dx + dy * dy
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }
}

/// Twice the signed area of `(a, b, c)`; positive when counterclockwise.
pub fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    (b - a).cross(c - a)
}

/// Closed, non-degenerate triangle with vertices stored counterclockwise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Triangle {
    v: [Point2; 3],
    lo: Point2,
    hi: Point2,
}

impl Triangle {
    pub fn new(a: Point2, b: Point2, c: Point2) -> Result<Self> {
        let s = orient(a, b, c);
        if !(s.is_finite() && s != 0.0) {
            return Err(Error::DegenerateTriangle(0.5 * s));
        }
        let v = if s > 0.0 { [a, b, c] } else { [a, c, b] };
        let lo = Point2::new(a.x.min(b.x).min(c.x), a.y.min(b.y).min(c.y));
        let hi = Point2::new(a.x.max(b.x).max(c.x), a.y.max(b.y).max(c.y));
        Ok(Triangle { v, lo, hi })
    }

    pub fn vertices(&self) -> [Point2; 3] {
        self.v
    }

    /// Positive area.
    pub fn area(&self) -> f64 {
        0.5 * orient(self.v[0], self.v[1], self.v[2])
    }

    pub fn centroid(&self) -> Point2 {
        (self.v[0] + self.v[1] + self.v[2]) * (1.0 / 3.0)
    }

    /// Axis-aligned bounding box as `(min, max)` corners.
    pub fn bbox(&self) -> (Point2, Point2) {
        (self.lo, self.hi)
    }

    pub fn contains(&self, p: Point2) -> bool {
        if p.x < self.lo.x || p.x > self.hi.x || p.y < self.lo.y || p.y > self.hi.y {
            return false;
        }
        let [a, b, c] = self.v;
        orient(a, b, p) >= 0.0 && orient(b, c, p) >= 0.0 && orient(c, a, p) >= 0.0
    }

    /// `{u : (u, v) in triangle}` as `(lo, hi)`, or `None` when the
    /// horizontal line misses the triangle.
    pub fn slice_at_y(&self, v: f64) -> Option<(f64, f64)> {
        if v < self.lo.y || v > self.hi.y {
            return None;
        }
        slice_polygon(&self.v, v, |p| (p.x, p.y))
    }

    /// `{v : (u, v) in triangle}` for a vertical line at `u`.
    pub fn slice_at_x(&self, u: f64) -> Option<(f64, f64)> {
        if u < self.lo.x || u > self.hi.x {
            return None;
        }
        slice_polygon(&self.v, u, |p| (p.y, p.x))
    }
}

/// Intersect the line `coord(p).1 == level` with a closed convex polygon.
#[inline]
pub(crate) fn slice_polygon(v: &[Point2], level: f64, coord: impl Fn(Point2) -> (f64, f64)) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let m = v.len();
    for k in 0..m {
        let (pa, pb) = (coord(v[k]), coord(v[if k + 1 == m { 0 } else { k + 1 }]));
        let (da, db) = (pa.1 - level, pb.1 - level);
        if da == 0.0 {
            lo = lo.min(pa.0);
            hi = hi.max(pa.0);
        }
        if (da < 0.0 && db > 0.0) || (da > 0.0 && db < 0.0) {
            let t = da / (da - db);
            let s = pa.0 + t * (pb.0 - pa.0);
            lo = lo.min(s);
            hi = hi.max(s);
        }
    }
    (lo <= hi).then_some((lo, hi))
}

// ---------------------------------------------------------------------------
// Owen's T and the triangle mass
// ---------------------------------------------------------------------------

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

fn gl20() -> &'static [(f64, f64)] {
    static NODES: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    NODES.get_or_init(|| gauss_legendre(20))
}

/// Owen's T function `T(h, a) = (1/2π) ∫_0^a exp(-h²(1+x²)/2) / (1+x²) dx`.
///
/// Direct composite Gauss-Legendre quadrature for `|a| <= 1`; larger `a`
/// go through the reflection identity so the integrand stays smooth.
pub fn owens_t(h: f64, a: f64) -> f64 {
    let h = h.abs();
    if a < 0.0 {
        return -owens_t(h, -a);
    }
    if a == 0.0 || h > 40.0 {
        return 0.0;
    }
    if a.is_infinite() {
        return 0.5 * std_normal_sf(h);
    }
    if a <= 1.0 {
        const PANELS: usize = 8;
        let width = a / PANELS as f64;
        let mut s = 0.0;
        for p in 0..PANELS {
            let mid = (p as f64 + 0.5) * width;
            for &(x, w) in gl20() {
                let t = mid + 0.5 * width * x;
                let q = 1.0 + t * t;
                s += w * (-0.5 * h * h * q).exp() / q;
            }
        }
        return s * 0.5 * width / (2.0 * PI);
    }
    let ah = a * h;
    let (qh, qah) = (std_normal_sf(h), std_normal_sf(ah));
    0.5 * (qh + qah) - qh * qah - owens_t(ah, 1.0 / a)
}

/// Mass of the right triangle with vertices at the origin, the foot `F` at
/// distance `h` and the point at distance `s` from `F` along the edge.
fn right_triangle_mass(h: f64, s: f64) -> f64 {
    if s == 0.0 {
        return 0.0;
    }
    let a = s / h;
    if a.is_infinite() {
        return 0.25 - 0.5 * std_normal_sf(h);
    }
    a.atan() / (2.0 * PI) - owens_t(h, a)
}

/// Signed mass of the triangle `(0, p, q)`: positive when counterclockwise.
fn origin_wedge_mass(p: Point2, q: Point2) -> f64 {
    let cross = p.cross(q);
    let d = q - p;
    let len = d.norm();
    if cross == 0.0 || len == 0.0 {
        return 0.0;
    }
    let h = cross.abs() / len;
    let dir = d * (1.0 / len);
    let signed = |t: f64| t.signum() * right_triangle_mass(h, t.abs());
    let m = signed(q.dot(dir)) - signed(p.dot(dir));
    m * cross.signum()
}

/// Probability that an independent standard bivariate normal pair falls in
/// `t`.
///
/// The triangle is split into three origin-anchored triangles (signed by
/// orientation); each is the difference of two right triangles whose mass
/// is an angular sector minus an Owen's T term. Near-degenerate triangles
/// use adaptive quadrature instead.
pub fn triangle_mass(t: &Triangle) -> f64 {
    let [a, b, c] = t.v;
    const NEAR: f64 = 1e-9;
    if a.dist2(b).sqrt() < NEAR || b.dist2(c).sqrt() < NEAR || c.dist2(a).sqrt() < NEAR {
        return triangle_mass_quadrature(t, 1e-13);
    }
    let m = origin_wedge_mass(a, b) + origin_wedge_mass(b, c) + origin_wedge_mass(c, a);
    m.clamp(0.0, 1.0)
}

fn density(p: Point2) -> f64 {
    (-0.5 * p.dot(p)).exp() / (2.0 * PI)
}

/// Tensor Gauss-Legendre rule on the triangle through the collapsed-square
/// (Duffy) map.
fn duffy_rule(a: Point2, b: Point2, c: Point2) -> f64 {
    let area2 = orient(a, b, c).abs();
    let nodes = gl20();
    let mut s = 0.0;
    for &(xs, ws) in nodes {
        let u = 0.5 * (xs + 1.0);
        for &(xt, wt) in nodes {
            let v = 0.5 * (xt + 1.0);
            let p = a + (b - a) * u + (c - b) * (u * v);
            s += ws * wt * u * density(p);
        }
    }
    s * 0.25 * area2
}

/// Adaptive quadrature of the Gaussian density over a triangle: midpoint
/// subdivision until the four children agree with the parent.
pub fn triangle_mass_quadrature(t: &Triangle, tol: f64) -> f64 {
    fn rec(a: Point2, b: Point2, c: Point2, whole: f64, tol: f64, depth: u32) -> f64 {
        let ab = (a + b) * 0.5;
        let bc = (b + c) * 0.5;
        let ca = (c + a) * 0.5;
        let parts = [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)];
        let vals: Vec<f64> = parts.iter().map(|&(p, q, r)| duffy_rule(p, q, r)).collect();
        let sum: f64 = vals.iter().sum();
        if depth >= 8 || (sum - whole).abs() <= tol {
            return sum;
        }
        parts
            .iter()
            .zip(&vals)
            .map(|(&(p, q, r), &w)| rec(p, q, r, w, 0.25 * tol, depth + 1))
            .sum()
    }
    let [a, b, c] = t.v;
    rec(a, b, c, duffy_rule(a, b, c), tol, 0)
}
