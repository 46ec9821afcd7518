//! Colored Voronoi truncation maps.
//!
//! A map is a list of nodes in latent space, each carrying a category. A
//! latent pair is mapped to the category of its nearest node (ties go to the
//! smallest node index). For conditioning, each category's cells are
//! triangulated inside the latent box `[-8, 8]^2`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::gauss_geom::union::{clip_half_plane, polygon_area};
use crate::gauss_geom::{ConvexPolygon, Point2, Triangle, TriangleUnion};
use crate::LATENT_BOX;

pub type Category = u32;

/// Nodes closer than this are considered coincident.
pub const COINCIDENCE_TOLERANCE: f64 = 1e-10;

/// Ghost nodes bounding every Voronoi cell before clipping to the box.
pub const GHOST_COUNT: usize = 16;
pub const GHOST_RADIUS: f64 = 1e4;

/// Ordered finite set of category labels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Category>", into = "Vec<Category>")]
pub struct CategorySet {
    labels: Vec<Category>,
}

impl CategorySet {
    pub fn new(labels: Vec<Category>) -> Result<Self> {
        if labels.is_empty() {
            return Err(invalid("category set is empty"));
        }
        for (i, a) in labels.iter().enumerate() {
            if labels[..i].contains(a) {
                return Err(invalid(format!("duplicate category label {a}")));
            }
        }
        Ok(CategorySet { labels })
    }

    /// Labels `0..k`.
    pub fn range(k: usize) -> Self {
        CategorySet {
            labels: (0..k as Category).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[Category] {
        &self.labels
    }

    pub fn index_of(&self, c: Category) -> Option<usize> {
        self.labels.iter().position(|&l| l == c)
    }

    pub fn require_index(&self, c: Category) -> Result<usize> {
        self.index_of(c).ok_or(Error::UnknownCategory(c))
    }

    pub fn label(&self, idx: usize) -> Category {
        self.labels[idx]
    }
}

impl TryFrom<Vec<Category>> for CategorySet {
    type Error = Error;
    fn try_from(v: Vec<Category>) -> Result<Self> {
        CategorySet::new(v)
    }
}

impl From<CategorySet> for Vec<Category> {
    fn from(c: CategorySet) -> Self {
        c.labels
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TruncationMap {
    categories: CategorySet,
    nodes: Vec<Point2>,
    colors: Vec<Category>,
}

impl TruncationMap {
    pub fn new(categories: CategorySet, nodes: Vec<Point2>, colors: Vec<Category>) -> Result<Self> {
        if nodes.len() != colors.len() {
            return Err(Error::LengthMismatch(nodes.len(), colors.len()));
        }
        if nodes.is_empty() {
            return Err(invalid("truncation map needs at least one node"));
        }
        if let Some(p) = nodes.iter().find(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(invalid(format!("non-finite node ({}, {})", p.x, p.y)));
        }
        for &c in &colors {
            categories.require_index(c)?;
        }
        Ok(TruncationMap {
            categories,
            nodes,
            colors,
        })
    }

    pub fn categories(&self) -> &CategorySet {
        &self.categories
    }

    pub fn nodes(&self) -> &[Point2] {
        &self.nodes
    }

    pub fn colors(&self) -> &[Category] {
        &self.colors
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Index of the nearest node; ties go to the smaller index.
    pub fn nearest_node(&self, x: f64, y: f64) -> usize {
        let q = Point2::new(x, y);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, n) in self.nodes.iter().enumerate() {
            let d = n.dist2(q);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    pub fn map_point(&self, x: f64, y: f64) -> Category {
        self.colors[self.nearest_node(x, y)]
    }

    /// Position of `map_point(x, y)` within the category set.
    pub fn map_point_index(&self, x: f64, y: f64) -> usize {
        // Colors were validated at construction.
        self.categories.index_of(self.map_point(x, y)).unwrap_or(0)
    }

    pub fn map_field(&self, xs: &[f64], ys: &[f64]) -> Result<Vec<Category>> {
        if xs.len() != ys.len() {
            return Err(Error::LengthMismatch(xs.len(), ys.len()));
        }
        Ok(xs.iter().zip(ys).map(|(&x, &y)| self.map_point(x, y)).collect())
    }

    /// Whether some node carries category `c`.
    pub fn uses(&self, c: Category) -> bool {
        self.colors.contains(&c)
    }

    pub fn check_distinct_nodes(&self) -> Result<()> {
        for i in 0..self.nodes.len() {
            for j in (i + 1)..self.nodes.len() {
                if self.nodes[i].dist2(self.nodes[j]).sqrt() < COINCIDENCE_TOLERANCE {
                    return Err(Error::DegenerateTessellation(i, j));
                }
            }
        }
        Ok(())
    }

    pub(crate) fn push_node(&mut self, p: Point2, c: Category) {
        self.nodes.push(p);
        self.colors.push(c);
    }

    pub(crate) fn remove_node(&mut self, i: usize) -> (Point2, Category) {
        (self.nodes.remove(i), self.colors.remove(i))
    }

    pub(crate) fn replace_node(&mut self, i: usize, p: Point2, c: Category) {
        self.nodes[i] = p;
        self.colors[i] = c;
    }

    /// Ghost nodes on a circle far outside the box.
    pub fn ghost_nodes(&self) -> Vec<Point2> {
        let spread = self.nodes.iter().map(|p| p.norm()).fold(0.0, f64::max);
        let r = GHOST_RADIUS.max(10.0 * spread);
        (0..GHOST_COUNT)
            .map(|k| {
                let a = 2.0 * PI * k as f64 / GHOST_COUNT as f64;
                Point2::new(r * a.cos(), r * a.sin())
            })
            .collect()
    }

    /// Voronoi cells of the real nodes, bounded by the ghost nodes, then
    /// clipped to the latent box. Cells may be empty.
    pub fn box_cells(&self) -> Result<Vec<Vec<Point2>>> {
        self.check_distinct_nodes()?;
        let ghosts = self.ghost_nodes();
        let all: Vec<Point2> = self.nodes.iter().chain(ghosts.iter()).copied().collect();
        let outer = 4.0 * ghosts[0].norm();
        Ok((0..self.nodes.len())
            .map(|i| {
                let cell = voronoi_cell(i, &all, square(outer));
                clip_to_box(&cell)
            })
            .collect())
    }

    pub fn triangulate(&self) -> Result<CategoryRegions> {
        let cells = self.box_cells()?;
        let mut regions: Vec<Vec<Triangle>> = vec![Vec::new(); self.categories.len()];
        let mut polygons: Vec<Vec<ConvexPolygon>> = vec![Vec::new(); self.categories.len()];
        for (cell, &color) in cells.iter().zip(&self.colors) {
            let k = self.categories.require_index(color)?;
            let tris = fan_triangulate(cell);
            if !tris.is_empty() {
                polygons[k].extend(ConvexPolygon::new(cell.clone()));
            }
            regions[k].extend(tris);
        }
        Ok(CategoryRegions {
            categories: self.categories.clone(),
            regions: regions.into_iter().map(TriangleUnion::from_disjoint).collect(),
            cells: polygons,
        })
    }

    /// Gaussian mass of each category region, in category-set order.
    pub fn category_proportions(&self) -> Result<Vec<f64>> {
        Ok(self.triangulate()?.proportions())
    }
}

/// Per-category triangle unions covering the latent box.
#[derive(Clone, Debug)]
pub struct CategoryRegions {
    categories: CategorySet,
    regions: Vec<TriangleUnion>,
    cells: Vec<Vec<ConvexPolygon>>,
}

impl CategoryRegions {
    pub fn categories(&self) -> &CategorySet {
        &self.categories
    }

    pub fn region(&self, c: Category) -> Option<&TriangleUnion> {
        self.categories.index_of(c).map(|k| &self.regions[k])
    }

    pub fn region_by_index(&self, k: usize) -> &TriangleUnion {
        &self.regions[k]
    }

    pub fn regions(&self) -> &[TriangleUnion] {
        &self.regions
    }

    /// Box-clipped Voronoi cells making up region `k`, for fast line slices.
    pub fn cells_by_index(&self, k: usize) -> &[ConvexPolygon] {
        &self.cells[k]
    }

    /// Category whose region contains `p` (first match in category order).
    pub fn locate(&self, p: Point2) -> Option<Category> {
        self.regions
            .iter()
            .position(|r| r.contains(p))
            .map(|k| self.categories.label(k))
    }

    pub fn proportions(&self) -> Vec<f64> {
        self.regions.iter().map(TriangleUnion::mass).collect()
    }
}

fn square(h: f64) -> Vec<Point2> {
    vec![
        Point2::new(-h, -h),
        Point2::new(h, -h),
        Point2::new(h, h),
        Point2::new(-h, h),
    ]
}

/// Cell of `sites[i]` within `bounds` by successive bisector clipping.
fn voronoi_cell(i: usize, sites: &[Point2], bounds: Vec<Point2>) -> Vec<Point2> {
    let me = sites[i];
    let mut poly = bounds;
    for (j, &other) in sites.iter().enumerate() {
        if j == i {
            continue;
        }
        let mid = (me + other) * 0.5;
        let dir = other - me;
        poly = clip_half_plane(&poly, |p| dir.dot(mid - p));
        if poly.len() < 3 {
            return Vec::new();
        }
    }
    poly
}

fn clip_to_box(poly: &[Point2]) -> Vec<Point2> {
    if poly.len() < 3 {
        return Vec::new();
    }
    let l = LATENT_BOX;
    let mut out = poly.to_vec();
    let sides: [fn(Point2, f64) -> f64; 4] = [|p, l| p.x + l, |p, l| l - p.x, |p, l| p.y + l, |p, l| l - p.y];
    for side in sides {
        out = clip_half_plane(&out, |p| side(p, l));
        if out.len() < 3 {
            return Vec::new();
        }
    }
    out
}

/// Fan triangulation of a convex polygon from its vertex centroid.
fn fan_triangulate(poly: &[Point2]) -> Vec<Triangle> {
    let mut pts: Vec<Point2> = Vec::with_capacity(poly.len());
    for &p in poly {
        if pts.last().is_none_or(|q: &Point2| q.dist2(p) > 1e-24) {
            pts.push(p);
        }
    }
    while pts.len() > 1 && pts[0].dist2(pts[pts.len() - 1]) <= 1e-24 {
        pts.pop();
    }
    if pts.len() < 3 || polygon_area(&pts).abs() < 1e-14 {
        return Vec::new();
    }
    let c = pts.iter().fold(Point2::default(), |acc, &p| acc + p) * (1.0 / pts.len() as f64);
    (0..pts.len())
        .filter_map(|k| {
            let t = Triangle::new(c, pts[k], pts[(k + 1) % pts.len()]).ok()?;
            (t.area() > 1e-14).then_some(t)
        })
        .collect()
}
