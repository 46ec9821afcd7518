//! Conditional simulation of the latent pair given categorical
//! observations.
//!
//! The state `(x, y)` always maps to the observed categories. Two kinds of
//! scans are combined:
//!
//! * the standard scan resamples one site at a time from its Gaussian
//!   conditional restricted to the site's category region;
//! * the propagative scan picks a pivot `β`, draws a fresh standard pair
//!   `(u, v)` and shifts every site by `(u - x_β) C_X(α, β)` and
//!   `(v - y_β) C_Y(α, β)`. The feasible `(u, v)` set is the intersection of
//!   affine preimages of all sites' regions; it is explored one coordinate
//!   at a time through interval slices and never built as polygons.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss_geom::interval::normalize;
use crate::gauss_geom::union::gibbs_sweeps;
use crate::gauss_geom::{sample_truncated_normal, ConvexPolygon, Interval, IntervalUnion, Point2, TriangleUnion};
use crate::grf::{covariance_matrix, CovarianceModel, Factorization, SiteSet};
use crate::tessellation::{Category, CategoryRegions, TruncationMap};

/// Coefficients at or below this magnitude are treated as zero.
pub const COEFFICIENT_CUTOFF: f64 = 1e-12;

/// Categorical observations at distinct sites.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Event {
    sites: SiteSet,
    categories: Vec<Category>,
}

impl Event {
    pub fn new(sites: SiteSet, categories: Vec<Category>) -> Result<Self> {
        if sites.len() != categories.len() {
            return Err(Error::LengthMismatch(sites.len(), categories.len()));
        }
        Ok(Event { sites, categories })
    }

    pub fn empty() -> Self {
        Event {
            sites: SiteSet::default(),
            categories: Vec::new(),
        }
    }

    pub fn sites(&self) -> &SiteSet {
        &self.sites
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Event {
        Event {
            sites: self.sites.subset(idx),
            categories: idx.iter().map(|&i| self.categories[i]).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentState {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Completed iterations.
    pub k: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConditionalConfig {
    pub iterations: usize,
    /// Standard-only scans before the first iteration.
    pub warmup: usize,
    /// Coordinate sweeps for each pair draw.
    pub inner_sweeps: usize,
    /// Standard scans per nugget level in the continuation warm-up
    /// (0 disables it).
    pub continuation_scans: usize,
}

impl Default for ConditionalConfig {
    fn default() -> Self {
        ConditionalConfig {
            iterations: 200,
            warmup: 5,
            inner_sweeps: 3,
            continuation_scans: 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiagnosticRow {
    pub iteration: usize,
    pub logdens_x: f64,
    pub logdens_y: f64,
}

#[derive(Clone, Debug)]
pub struct ConditionalRun {
    pub state: LatentState,
    /// Row 0 is the initial state; row `i` follows iteration `i`.
    pub diagnostics: Vec<DiagnosticRow>,
    /// Updates undone because a site would have changed category. Such
    /// updates only arise from rounding on region boundaries.
    pub reverted: usize,
}

/// First nugget level of the continuation warm-up.
pub const CONTINUATION_START: f64 = 1.0;
/// Ratio between successive nugget levels.
pub const CONTINUATION_RATIO: f64 = 0.25;

/// Precomputed conditioning problem for one map and one event.
pub struct ConditionalSampler<'a> {
    map: &'a TruncationMap,
    regions: &'a CategoryRegions,
    event: &'a Event,
    site_region: Vec<&'a TriangleUnion>,
    site_cells: Vec<&'a [ConvexPolygon]>,
    cx: DMatrix<f64>,
    cy: DMatrix<f64>,
    qx: DMatrix<f64>,
    qy: DMatrix<f64>,
    fx: Option<Factorization>,
    fy: Option<Factorization>,
    inner_sweeps: usize,
    reverted: usize,
    scratch: SliceScratch,
}

/// Reused buffers for pivot slices.
#[derive(Default)]
struct SliceScratch {
    feasible: Vec<Interval>,
    pre: Vec<Interval>,
    next: Vec<Interval>,
}

impl<'a> ConditionalSampler<'a> {
    pub fn new(
        map: &'a TruncationMap,
        regions: &'a CategoryRegions,
        event: &'a Event,
        cov_x: &CovarianceModel,
        cov_y: &CovarianceModel,
    ) -> Result<Self> {
        let mut site_region = Vec::with_capacity(event.len());
        let mut site_cells = Vec::with_capacity(event.len());
        for &c in event.categories() {
            let k = regions.categories().index_of(c).ok_or(Error::UnknownCategory(c))?;
            let r = regions.region_by_index(k);
            if r.is_empty() {
                return Err(Error::UnmappableCategory(c));
            }
            site_region.push(r);
            site_cells.push(regions.cells_by_index(k));
        }
        let cx = covariance_matrix(event.sites(), cov_x);
        let cy = covariance_matrix(event.sites(), cov_y);
        let (fx, fy, qx, qy) = if event.is_empty() {
            (None, None, DMatrix::zeros(0, 0), DMatrix::zeros(0, 0))
        } else {
            let fx = Factorization::new(&cx)?;
            let fy = Factorization::new(&cy)?;
            let (qx, qy) = (fx.inverse(), fy.inverse());
            (Some(fx), Some(fy), qx, qy)
        };
        Ok(ConditionalSampler {
            map,
            regions,
            event,
            site_region,
            site_cells,
            cx,
            cy,
            qx,
            qy,
            fx,
            fy,
            inner_sweeps: 3,
            reverted: 0,
            scratch: SliceScratch::default(),
        })
    }

    pub fn set_inner_sweeps(&mut self, sweeps: usize) {
        self.inner_sweeps = sweeps.max(1);
    }

    pub fn reverted(&self) -> usize {
        self.reverted
    }

    pub fn event(&self) -> &Event {
        self.event
    }

    /// Same representative pair for every site of a category: the centroid
    /// of the category's largest-mass triangle.
    pub fn init_state(&self) -> Result<LatentState> {
        let labels = self.regions.categories();
        let mut reps: Vec<Option<Point2>> = vec![None; labels.len()];
        let mut x = Vec::with_capacity(self.event.len());
        let mut y = Vec::with_capacity(self.event.len());
        for &c in self.event.categories() {
            let k = labels.require_index(c)?;
            if reps[k].is_none() {
                reps[k] = Some(representative_point(self.map, self.regions.region_by_index(k), c)?);
            }
            let p = reps[k].expect("set above");
            x.push(p.x);
            y.push(p.y);
        }
        Ok(LatentState { x, y, k: 0 })
    }

    pub fn is_feasible(&self, s: &LatentState) -> bool {
        (0..self.event.len()).all(|a| self.site_ok(a, s.x[a], s.y[a]))
    }

    fn site_ok(&self, a: usize, x: f64, y: f64) -> bool {
        self.map.map_point(x, y) == self.event.categories()[a]
    }

    /// Gaussian conditional means and standard deviations of `(x_a, y_a)`.
    pub fn site_conditional(&self, s: &LatentState, a: usize) -> ((f64, f64), (f64, f64)) {
        let cond = |q: &DMatrix<f64>, v: &[f64]| {
            let qaa = q[(a, a)];
            let dot: f64 = (0..v.len()).filter(|&g| g != a).map(|g| q[(a, g)] * v[g]).sum();
            (-dot / qaa, (1.0 / qaa).sqrt())
        };
        let (mx, sx) = cond(&self.qx, &s.x);
        let (my, sy) = cond(&self.qy, &s.y);
        ((mx, my), (sx, sy))
    }

    /// Standard scans under `C + tau I` for `tau` shrinking geometrically
    /// from [`CONTINUATION_START`] to the factorization jitter.
    ///
    /// The starting state is piecewise constant, which is extremely unlikely
    /// under a smooth covariance. Single-site updates repair that quickly
    /// while a nugget keeps the conditionals wide, and each level hands a
    /// nearly typical state to the next. Feasibility never depends on `tau`.
    pub fn continuation<R: Rng + ?Sized>(&mut self, s: &mut LatentState, scans: usize, rng: &mut R) -> Result<()> {
        let (Some(fx), Some(fy)) = (&self.fx, &self.fy) else {
            return Ok(());
        };
        let floor = fx.jitter().max(fy.jitter());
        let (qx, qy) = (self.qx.clone(), self.qy.clone());
        let mut tau = CONTINUATION_START;
        while tau > floor && scans > 0 {
            self.qx = Factorization::new(&with_nugget(&self.cx, tau))?.inverse();
            self.qy = Factorization::new(&with_nugget(&self.cy, tau))?.inverse();
            for _ in 0..scans {
                self.standard_scan(s, rng)?;
            }
            tau *= CONTINUATION_RATIO;
        }
        self.qx = qx;
        self.qy = qy;
        Ok(())
    }

    /// One standard Gibbs scan in a fresh random site order.
    pub fn standard_scan<R: Rng + ?Sized>(&mut self, s: &mut LatentState, rng: &mut R) -> Result<()> {
        let mut order: Vec<usize> = (0..self.event.len()).collect();
        order.shuffle(rng);
        for a in order {
            let (means, sds) = self.site_conditional(s, a);
            let start = Point2::new(s.x[a], s.y[a]);
            let p = gibbs_sweeps(self.site_region[a], means, sds, start, self.inner_sweeps, rng)?;
            if self.site_ok(a, p.x, p.y) {
                s.x[a] = p.x;
                s.y[a] = p.y;
            } else {
                self.reverted += 1;
            }
        }
        Ok(())
    }

    /// One propagative scan over pivots in a fresh random order.
    pub fn propagative_scan<R: Rng + ?Sized>(&mut self, s: &mut LatentState, rng: &mut R) -> Result<()> {
        let mut order: Vec<usize> = (0..self.event.len()).collect();
        order.shuffle(rng);
        for b in order {
            self.pivot_update(s, b, rng)?;
        }
        Ok(())
    }

    fn coefficients(&self, b: usize) -> (Vec<f64>, Vec<f64>) {
        let cut = |c: f64| if c.abs() <= COEFFICIENT_CUTOFF { 0.0 } else { c };
        let n = self.event.len();
        (
            (0..n).map(|a| cut(self.cx[(a, b)])).collect(),
            (0..n).map(|a| cut(self.cy[(a, b)])).collect(),
        )
    }

    /// Feasible `u` for fixed `v` (or feasible `v` for fixed `u` when
    /// `along_x` is false).
    #[allow(clippy::too_many_arguments)]
    fn pivot_slice(
        &self,
        scratch: &mut SliceScratch,
        s: &LatentState,
        b: usize,
        c_move: &[f64],
        c_fixed: &[f64],
        other: f64,
        along_x: bool,
    ) -> IntervalUnion {
        let SliceScratch { feasible, pre, next } = scratch;
        let (mv, fx) = if along_x { (&s.x, &s.y) } else { (&s.y, &s.x) };
        let (mb, fb) = (mv[b], fx[b]);
        feasible.clear();
        feasible.push(Interval::new(f64::NEG_INFINITY, f64::INFINITY));
        for a in 0..self.event.len() {
            let fixed = fx[a] + (other - fb) * c_fixed[a];
            pre.clear();
            pre.extend(self.site_cells[a].iter().filter_map(|p| {
                let seg = if along_x {
                    p.slice_at_y(fixed)
                } else {
                    p.slice_at_x(fixed)
                };
                seg.map(|(lo, hi)| Interval::new(lo, hi))
            }));
            if pre.len() > 1 {
                normalize(pre);
            }
            let c = c_move[a];
            if c == 0.0 {
                if !pre.iter().any(|iv| iv.contains(mv[a])) {
                    return IntervalUnion::empty();
                }
                continue;
            }
            // mv[a] + (t - mb) c in slice  <=>  t in mb + (slice - mv[a]) / c.
            let (offset, scale) = (mb - mv[a] / c, 1.0 / c);
            for iv in pre.iter_mut() {
                let (lo, hi) = (offset + scale * iv.lo, offset + scale * iv.hi);
                *iv = if scale >= 0.0 {
                    Interval::new(lo, hi)
                } else {
                    Interval::new(hi, lo)
                };
            }
            next.clear();
            for f in feasible.iter() {
                for p in pre.iter() {
                    let (lo, hi) = (f.lo.max(p.lo), f.hi.min(p.hi));
                    if lo <= hi {
                        next.push(Interval::new(lo, hi));
                    }
                }
            }
            if next.is_empty() {
                return IntervalUnion::empty();
            }
            if next.len() > 1 {
                next.sort_by(|x, y| x.lo.total_cmp(&y.lo));
            }
            std::mem::swap(feasible, next);
        }
        IntervalUnion::from_intervals(feasible.iter().copied())
    }

    /// Draw `(u, v)` for pivot `b` and propagate it to every site.
    pub fn pivot_update<R: Rng + ?Sized>(&mut self, s: &mut LatentState, b: usize, rng: &mut R) -> Result<()> {
        let (cx, cy) = self.coefficients(b);
        let (mut u, mut v) = (s.x[b], s.y[b]);
        let mut scratch = std::mem::take(&mut self.scratch);
        for _ in 0..self.inner_sweeps {
            let dom = self.pivot_slice(&mut scratch, s, b, &cx, &cy, v, true);
            match sample_truncated_normal(0.0, 1.0, &dom, rng) {
                Ok(t) => u = t,
                Err(Error::EmptyDomain) => {}
                Err(e) => return Err(e),
            }
            let dom = self.pivot_slice(&mut scratch, s, b, &cy, &cx, u, false);
            match sample_truncated_normal(0.0, 1.0, &dom, rng) {
                Ok(t) => v = t,
                Err(Error::EmptyDomain) => {}
                Err(e) => return Err(e),
            }
        }
        self.scratch = scratch;
        let (nx, ny) = propagate(s, b, u, v, &cx, &cy);
        let n = self.event.len();
        if (0..n).all(|a| self.site_ok(a, nx[a], ny[a])) {
            s.x = nx;
            s.y = ny;
        } else {
            self.reverted += 1;
        }
        Ok(())
    }

    /// Log densities of `x` and `y` under their Gaussian laws.
    pub fn diagnostic(&self, s: &LatentState) -> (f64, f64) {
        match (&self.fx, &self.fy) {
            (Some(fx), Some(fy)) => (fx.log_density(&s.x), fy.log_density(&s.y)),
            _ => (0.0, 0.0),
        }
    }

    /// Initial state, continuation and standard warm-up, then per iteration one
    /// propagative scan followed by one standard scan. `visit` sees the
    /// state after every iteration.
    pub fn run<R: Rng + ?Sized>(
        &mut self,
        cfg: &ConditionalConfig,
        rng: &mut R,
        mut visit: impl FnMut(&LatentState),
    ) -> Result<ConditionalRun> {
        self.set_inner_sweeps(cfg.inner_sweeps);
        let mut s = self.init_state()?;
        let row = |me: &Self, s: &LatentState| {
            let (lx, ly) = me.diagnostic(s);
            DiagnosticRow {
                iteration: s.k,
                logdens_x: lx,
                logdens_y: ly,
            }
        };
        let mut diagnostics = vec![row(self, &s)];
        if cfg.iterations > 0 {
            self.continuation(&mut s, cfg.continuation_scans, rng)?;
            for _ in 0..cfg.warmup {
                self.standard_scan(&mut s, rng)?;
            }
        }
        for _ in 0..cfg.iterations {
            self.propagative_scan(&mut s, rng)?;
            self.standard_scan(&mut s, rng)?;
            s.k += 1;
            debug_assert!(self.is_feasible(&s));
            diagnostics.push(row(self, &s));
            visit(&s);
        }
        Ok(ConditionalRun {
            state: s,
            diagnostics,
            reverted: self.reverted,
        })
    }
}

fn with_nugget(c: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    let mut m = c.clone();
    for i in 0..m.nrows() {
        m[(i, i)] += tau;
    }
    m
}

/// Every site shifted by the pivot innovation `(u, v)`.
fn propagate(s: &LatentState, b: usize, u: f64, v: f64, cx: &[f64], cy: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (du, dv) = (u - s.x[b], v - s.y[b]);
    (
        s.x.iter().zip(cx).map(|(x, c)| x + du * c).collect(),
        s.y.iter().zip(cy).map(|(y, c)| y + dv * c).collect(),
    )
}

fn representative_point(map: &TruncationMap, region: &TriangleUnion, c: Category) -> Result<Point2> {
    let mut tris: Vec<_> = region.triangles().iter().collect();
    tris.sort_by(|a, b| crate::gauss_geom::triangle_mass(b).total_cmp(&crate::gauss_geom::triangle_mass(a)));
    tris.into_iter()
        .map(|t| t.centroid())
        .find(|p| map.map_point(p.x, p.y) == c)
        .ok_or(Error::UnmappableCategory(c))
}

/// Conditional simulation with default settings.
pub fn run_conditional<R: Rng + ?Sized>(
    map: &TruncationMap,
    event: &Event,
    cov_x: &CovarianceModel,
    cov_y: &CovarianceModel,
    cfg: &ConditionalConfig,
    rng: &mut R,
) -> Result<ConditionalRun> {
    let regions = map.triangulate()?;
    ConditionalSampler::new(map, &regions, event, cov_x, cov_y)?.run(cfg, rng, |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grf::CovarianceKind;
    use crate::tessellation::CategorySet;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn rng(s: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(s)
    }

    fn half_plane() -> TruncationMap {
        TruncationMap::new(
            CategorySet::range(2),
            vec![Point2::new(-1.0, 0.0), Point2::new(1.0, 0.0)],
            vec![0, 1],
        )
        .unwrap()
    }

    fn three_cat() -> TruncationMap {
        TruncationMap::new(
            CategorySet::range(3),
            vec![
                Point2::new(-0.8, 0.3),
                Point2::new(0.9, 0.5),
                Point2::new(0.1, -1.0),
                Point2::new(1.5, -1.5),
            ],
            vec![0, 1, 2, 0],
        )
        .unwrap()
    }

    fn single() -> TruncationMap {
        TruncationMap::new(CategorySet::range(1), vec![Point2::new(0.0, 0.0)], vec![0]).unwrap()
    }

    fn gauss(a: f64) -> CovarianceModel {
        CovarianceModel::gaussian(a).unwrap()
    }

    fn event(sites: Vec<(i64, i64)>, cats: Vec<Category>) -> Event {
        Event::new(SiteSet::new(sites).unwrap(), cats).unwrap()
    }

    #[test]
    fn init_is_feasible_and_shares_pairs() {
        let m = three_cat();
        let r = m.triangulate().unwrap();
        let e = event(vec![(1, 1), (2, 1), (3, 1), (4, 1)], vec![0, 2, 0, 2]);
        let g = gauss(3.0);
        let cs = ConditionalSampler::new(&m, &r, &e, &g, &g).unwrap();
        let s = cs.init_state().unwrap();
        assert!(cs.is_feasible(&s));
        assert_eq!((s.x[0], s.y[0]), (s.x[2], s.y[2]));
        assert_eq!((s.x[1], s.y[1]), (s.x[3], s.y[3]));
        assert_ne!((s.x[0], s.y[0]), (s.x[1], s.y[1]));

        let same = event(vec![(1, 1), (5, 5)], vec![1, 1]);
        let cs = ConditionalSampler::new(&m, &r, &same, &g, &g).unwrap();
        let s = cs.init_state().unwrap();
        assert_eq!(s.x[0], s.x[1]);
        assert_eq!(s.y[0], s.y[1]);
    }

    #[test]
    fn random_maps_give_feasible_init() {
        let mut rr = rng(1);
        for _ in 0..50 {
            let n = rr.random_range(3..15);
            let nodes: Vec<Point2> = (0..n)
                .map(|_| Point2::new(rr.sample(StandardNormal), rr.sample(StandardNormal)))
                .collect();
            let mut colors: Vec<Category> = (0..n).map(|_| rr.random_range(0..3)).collect();
            colors[0] = 0;
            colors[1] = 1;
            colors[2] = 2;
            let m = TruncationMap::new(CategorySet::range(3), nodes, colors).unwrap();
            let r = m.triangulate().unwrap();
            let cats: Vec<Category> = (0..10).map(|_| rr.random_range(0..3)).collect();
            let e = event((0..10).map(|i| (i, 0)).collect(), cats);
            let g = gauss(2.0);
            let cs = ConditionalSampler::new(&m, &r, &e, &g, &g).unwrap();
            assert!(cs.is_feasible(&cs.init_state().unwrap()));
        }
    }

    #[test]
    fn unused_category_is_unmappable() {
        let m = TruncationMap::new(CategorySet::range(2), vec![Point2::new(0.0, 0.0)], vec![0]).unwrap();
        let r = m.triangulate().unwrap();
        let e = event(vec![(0, 0)], vec![1]);
        let g = gauss(2.0);
        assert!(matches!(
            ConditionalSampler::new(&m, &r, &e, &g, &g),
            Err(Error::UnmappableCategory(1))
        ));
    }

    #[test]
    fn zero_iterations_return_init() {
        let m = three_cat();
        let e = event(vec![(1, 1), (2, 1)], vec![0, 1]);
        let g = gauss(3.0);
        let cfg = ConditionalConfig {
            iterations: 0,
            ..Default::default()
        };
        let run = run_conditional(&m, &e, &g, &g, &cfg, &mut rng(2)).unwrap();
        let r = m.triangulate().unwrap();
        let init = ConditionalSampler::new(&m, &r, &e, &g, &g)
            .unwrap()
            .init_state()
            .unwrap();
        assert_eq!(run.state, init);
        assert_eq!(run.diagnostics.len(), 1);
    }

    #[test]
    fn scans_preserve_feasibility() {
        let m = three_cat();
        let r = m.triangulate().unwrap();
        let mut rr = rng(3);
        let sites: Vec<(i64, i64)> = (0..4).flat_map(|x| (0..4).map(move |y| (x, y))).collect();
        let cats: Vec<Category> = (0..16).map(|_| rr.random_range(0..3)).collect();
        let e = event(sites, cats);
        let g = gauss(2.0);
        let mut cs = ConditionalSampler::new(&m, &r, &e, &g, &g).unwrap();
        let mut s = cs.init_state().unwrap();
        for _ in 0..50 {
            cs.propagative_scan(&mut s, &mut rr).unwrap();
            assert!(cs.is_feasible(&s));
            cs.standard_scan(&mut s, &mut rr).unwrap();
            assert!(cs.is_feasible(&s));
            let (lx, ly) = cs.diagnostic(&s);
            assert!(lx.is_finite() && ly.is_finite());
        }
    }

    #[test]
    fn pivot_with_current_innovation_is_a_fixed_point() {
        let m = three_cat();
        let r = m.triangulate().unwrap();
        let e = event(vec![(0, 0), (1, 0), (2, 1)], vec![0, 1, 2]);
        let g = gauss(3.0);
        let mut cs = ConditionalSampler::new(&m, &r, &e, &g, &g).unwrap();
        let mut s = cs.init_state().unwrap();
        let mut rr = rng(4);
        cs.standard_scan(&mut s, &mut rr).unwrap();
        for b in 0..3 {
            let (cx, cy) = cs.coefficients(b);
            let (nx, ny) = propagate(&s, b, s.x[b], s.y[b], &cx, &cy);
            assert_eq!((nx, ny), (s.x.clone(), s.y.clone()));
            // The current innovation is always inside the feasible slices.
            assert!(cs
                .pivot_slice(&mut SliceScratch::default(), &s, b, &cx, &cy, s.y[b], true)
                .contains(s.x[b]));
            assert!(cs
                .pivot_slice(&mut SliceScratch::default(), &s, b, &cy, &cx, s.x[b], false)
                .contains(s.y[b]));
            assert_eq!(cx[b], 1.0);
        }
    }

    #[test]
    fn far_site_is_unconstrained_and_unchanged() {
        let m = half_plane();
        let r = m.triangulate().unwrap();
        let e = event(vec![(0, 0), (10_000, 0)], vec![0, 1]);
        let g = gauss(2.0);
        let mut cs = ConditionalSampler::new(&m, &r, &e, &g, &g).unwrap();
        let mut s = cs.init_state().unwrap();
        let (cx, cy) = cs.coefficients(0);
        assert_eq!((cx[1], cy[1]), (0.0, 0.0));
        let before = (s.x[1], s.y[1]);
        let mut rr = rng(5);
        for _ in 0..100 {
            cs.pivot_update(&mut s, 0, &mut rr).unwrap();
            assert_eq!((s.x[1], s.y[1]), before);
        }
        // Site 1 imposes nothing on pivot 0's innovation.
        let dom = cs.pivot_slice(&mut SliceScratch::default(), &s, 0, &cx, &cy, s.y[0], true);
        let alone = r.region(0).unwrap().slice_u(s.y[0]);
        assert_eq!(dom, alone);
    }

    #[test]
    fn preimages_map_back_into_regions() {
        let m = three_cat();
        let r = m.triangulate().unwrap();
        let mut rr = rng(6);
        let mut violations = 0;
        for _ in 0..10_000 {
            let tu = r.region_by_index(rr.random_range(0..3));
            let t = tu.triangles()[rr.random_range(0..tu.triangles().len())];
            let c = t.centroid();
            let (xa, xb): (f64, f64) = (c.x, rr.random_range(-2.0..2.0));
            let coef: f64 = rr.random_range(-1.0..1.0);
            if coef.abs() < 1e-3 {
                continue;
            }
            let slice = tu.slice_u(c.y);
            let pre = slice.affine_image(xb - xa / coef, 1.0 / coef);
            let Ok(u) = sample_truncated_normal(0.0, 1.0, &pre, &mut rr) else {
                continue;
            };
            let x_new = xa + (u - xb) * coef;
            let ok = tu.triangles().iter().any(|t| {
                t.slice_at_y(c.y)
                    .is_some_and(|(lo, hi)| x_new >= lo - 1e-9 && x_new <= hi + 1e-9)
            });
            violations += (!ok) as usize;
        }
        assert_eq!(violations, 0);
    }

    #[test]
    fn single_site_is_resampled_within_region() {
        let m = three_cat();
        let r = m.triangulate().unwrap();
        let e = event(vec![(0, 0)], vec![2]);
        let g = gauss(2.0);
        let mut cs = ConditionalSampler::new(&m, &r, &e, &g, &g).unwrap();
        let mut s = cs.init_state().unwrap();
        let ((mx, my), (sx, sy)) = cs.site_conditional(&s, 0);
        assert!(mx.abs() < 1e-12 && my.abs() < 1e-12);
        assert!((sx - 1.0).abs() < 1e-5 && (sy - 1.0).abs() < 1e-5);
        let mut rr = rng(7);
        let mut moved = 0;
        for _ in 0..200 {
            let before = s.clone();
            cs.propagative_scan(&mut s, &mut rr).unwrap();
            cs.standard_scan(&mut s, &mut rr).unwrap();
            assert_eq!(m.map_point(s.x[0], s.y[0]), 2);
            moved += (s != before) as usize;
        }
        assert!(moved > 190);
    }

    /// Rejection sampling of one site's pair given its category.
    fn rejection_hist(m: &TruncationMap, c: Category, n: usize, bins: usize, rr: &mut ChaCha8Rng) -> Vec<f64> {
        let mut h = vec![0.0; bins * bins];
        let mut got = 0;
        while got < n {
            let (x, y): (f64, f64) = (rr.sample(StandardNormal), rr.sample(StandardNormal));
            if m.map_point(x, y) == c {
                h[bin(x, y, bins)] += 1.0;
                got += 1;
            }
        }
        h
    }

    fn bin(a: f64, b: f64, bins: usize) -> usize {
        let f = |v: f64| (((v + 4.0) / 8.0) * bins as f64).floor().clamp(0.0, bins as f64 - 1.0) as usize;
        f(a) * bins + f(b)
    }

    fn tv(a: &[f64], b: &[f64]) -> f64 {
        let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
        0.5 * a.iter().zip(b).map(|(x, y)| (x / sa - y / sb).abs()).sum::<f64>()
    }

    #[test]
    fn uncorrelated_sites_match_rejection() {
        let m = three_cat();
        let r = m.triangulate().unwrap();
        // Spherical model with tiny range: distinct sites are uncorrelated.
        let g = CovarianceModel::new(CovarianceKind::Spherical, 0.5).unwrap();
        let e = event(vec![(0, 0), (1, 0)], vec![1, 2]);
        let mut cs = ConditionalSampler::new(&m, &r, &e, &g, &g).unwrap();
        let mut s = cs.init_state().unwrap();
        let mut rr = rng(8);
        let (bins, n) = (20, 100_000);
        let mut h0 = vec![0.0; bins * bins];
        let mut h1 = vec![0.0; bins * bins];
        for _ in 0..100 {
            cs.standard_scan(&mut s, &mut rr).unwrap();
        }
        for _ in 0..n {
            cs.standard_scan(&mut s, &mut rr).unwrap();
            h0[bin(s.x[0], s.y[0], bins)] += 1.0;
            h1[bin(s.x[1], s.y[1], bins)] += 1.0;
        }
        let o0 = rejection_hist(&m, 1, n, bins, &mut rr);
        let o1 = rejection_hist(&m, 2, n, bins, &mut rr);
        assert!(tv(&h0, &o0) < 0.05, "{}", tv(&h0, &o0));
        assert!(tv(&h1, &o1) < 0.05, "{}", tv(&h1, &o1));
    }

    #[test]
    fn unconstrained_standard_scan_autocovariance() {
        let m = single();
        let r = m.triangulate().unwrap();
        let g = gauss(2.0);
        let e = event(vec![(0, 0), (1, 0)], vec![0, 0]);
        let rho = g.between((0, 0), (1, 0));
        let mut cs = ConditionalSampler::new(&m, &r, &e, &g, &g).unwrap();
        let mut s = cs.init_state().unwrap();
        let mut rr = rng(9);
        let n = 200_000;
        let mut xs = Vec::with_capacity(n);
        for _ in 0..n {
            cs.standard_scan(&mut s, &mut rr).unwrap();
            xs.push(s.x[0]);
        }
        let lag1: f64 = xs.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / (n - 1) as f64;
        let var: f64 = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
        // Either visiting order gives Cov(x1', x1) = rho^2.
        assert!((lag1 - rho * rho).abs() < 0.05, "lag1 {lag1} vs {}", rho * rho);
        assert!((var - 1.0).abs() < 0.05);
    }

    #[test]
    fn unconstrained_propagative_scan_covariance() {
        let m = single();
        let r = m.triangulate().unwrap();
        let g = gauss(3.0);
        let sites = SiteSet::grid(5, 5);
        let e = Event::new(sites.clone(), vec![0; 25]).unwrap();
        let c = covariance_matrix(&sites, &g);
        let mut cs = ConditionalSampler::new(&m, &r, &e, &g, &g).unwrap();
        let mut s = cs.init_state().unwrap();
        let mut rr = rng(10);
        for _ in 0..50 {
            cs.propagative_scan(&mut s, &mut rr).unwrap();
        }
        let n = 5000;
        let mut acc = DMatrix::<f64>::zeros(25, 25);
        for _ in 0..n {
            cs.propagative_scan(&mut s, &mut rr).unwrap();
            let v = nalgebra::DVector::from_column_slice(&s.x);
            acc += &v * v.transpose();
        }
        acc /= n as f64;
        let worst = (acc - c).amax();
        assert!(worst < 0.05, "max entry error {worst}");
    }
}
