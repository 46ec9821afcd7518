//! Maximum-entropy pattern distributions.
//!
//! The five-point pattern is ordered `(center, +x, -x, +y, -y)`. A
//! [`PatternPmf`] stores one probability per category tuple, indexed base-`k`
//! little-endian: `index = z0 + k*z1 + k^2*z2 + k^3*z3 + k^4*z4` where `z_s`
//! is the category index at pattern position `s`.
//!
//! Fitting uses iterative proportional fitting: each step rescales the
//! current table so that one pair marginal matches its target, which is the
//! I-projection onto that marginal constraint.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tessellation::{Category, CategorySet};

pub const PATTERN_SIZE: usize = 5;
pub const CENTER: usize = 0;
pub const PLUS_X: usize = 1;
pub const MINUS_X: usize = 2;
pub const PLUS_Y: usize = 3;
pub const MINUS_Y: usize = 4;

/// Lattice offsets of the pattern positions.
pub const PATTERN_OFFSETS: [(i64, i64); PATTERN_SIZE] = [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)];

const PMF_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternPmf {
    k: usize,
    table: Vec<f64>,
}

impl PatternPmf {
    pub fn uniform(k: usize) -> Self {
        let n = k.pow(PATTERN_SIZE as u32);
        PatternPmf {
            k,
            table: vec![1.0 / n as f64; n],
        }
    }

    pub fn point_mass(k: usize, tuple: [usize; PATTERN_SIZE]) -> Self {
        let mut p = PatternPmf {
            k,
            table: vec![0.0; k.pow(PATTERN_SIZE as u32)],
        };
        let i = p.index(tuple);
        p.table[i] = 1.0;
        p
    }

    pub fn from_table(k: usize, table: Vec<f64>) -> Result<Self> {
        if k == 0 {
            return Err(invalid("pattern needs at least one category"));
        }
        let n = k.pow(PATTERN_SIZE as u32);
        if table.len() != n {
            return Err(Error::LengthMismatch(table.len(), n));
        }
        check_pmf(&table, "pattern table")?;
        Ok(PatternPmf { k, table })
    }

    /// Normalizes nonnegative weights (e.g. counts) into a pmf.
    pub fn from_weights(k: usize, mut table: Vec<f64>) -> Result<Self> {
        let s: f64 = table.iter().sum();
        if !(s > 0.0) || table.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(invalid("weights must be finite, nonnegative and not all zero"));
        }
        table.iter_mut().for_each(|w| *w /= s);
        PatternPmf::from_table(k, table)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn index(&self, tuple: [usize; PATTERN_SIZE]) -> usize {
        tuple_index(self.k, tuple)
    }

    pub fn tuple(&self, index: usize) -> [usize; PATTERN_SIZE] {
        index_tuple(self.k, index)
    }

    pub fn prob(&self, tuple: [usize; PATTERN_SIZE]) -> f64 {
        self.table[self.index(tuple)]
    }

    /// Marginal pmf of pattern position `i`.
    pub fn single_marginal(&self, i: usize) -> Vec<f64> {
        let stride = self.k.pow(i as u32);
        let mut m = vec![0.0; self.k];
        for (idx, &p) in self.table.iter().enumerate() {
            m[(idx / stride) % self.k] += p;
        }
        m
    }

    pub fn entropy(&self) -> f64 {
        entropy(&self.table)
    }
}

pub fn tuple_index(k: usize, tuple: [usize; PATTERN_SIZE]) -> usize {
    tuple.iter().rev().fold(0, |acc, &z| acc * k + z)
}

pub fn index_tuple(k: usize, mut index: usize) -> [usize; PATTERN_SIZE] {
    let mut t = [0; PATTERN_SIZE];
    for z in t.iter_mut() {
        *z = index % k;
        index /= k;
    }
    t
}

fn check_pmf(table: &[f64], what: &str) -> Result<()> {
    if table.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(invalid(format!("{what} has negative or non-finite entries")));
    }
    let s: f64 = table.iter().sum();
    if (s - 1.0).abs() > PMF_TOLERANCE {
        return Err(invalid(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

/// Target joint pmf of pattern positions `(i, j)`; `target[a * k + b]` is
/// the probability of category `a` at `i` and `b` at `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairConstraint {
    pub i: usize,
    pub j: usize,
    pub target: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatternSpec {
    k: usize,
    pairs: Vec<PairConstraint>,
}

impl PatternSpec {
    pub fn new(k: usize, pairs: Vec<PairConstraint>) -> Result<Self> {
        if k == 0 {
            return Err(invalid("pattern needs at least one category"));
        }
        for c in &pairs {
            if c.i >= PATTERN_SIZE || c.j >= PATTERN_SIZE || c.i == c.j {
                return Err(invalid(format!("bad pattern pair ({}, {})", c.i, c.j)));
            }
            if c.target.len() != k * k {
                return Err(Error::LengthMismatch(c.target.len(), k * k));
            }
            check_pmf(&c.target, "pair target")?;
        }
        Ok(PatternSpec { k, pairs })
    }

    /// Stationary constraints from the two unit-lag tables. `pi10[a][b]` is
    /// the probability of `a` at a site and `b` one step in `+x`; likewise
    /// `pi01` for `+y`. The `-x` and `-y` pairs use the same tables with the
    /// neighbor in first position.
    pub fn from_unit_lag(k: usize, pi10: &[Vec<f64>], pi01: &[Vec<f64>]) -> Result<Self> {
        let flat = |t: &[Vec<f64>]| -> Result<Vec<f64>> {
            if t.len() != k || t.iter().any(|r| r.len() != k) {
                return Err(invalid(format!("unit-lag table must be {k}x{k}")));
            }
            Ok(t.iter().flatten().copied().collect())
        };
        let h10 = flat(pi10)?;
        let h01 = flat(pi01)?;
        PatternSpec::new(
            k,
            vec![
                PairConstraint {
                    i: CENTER,
                    j: PLUS_X,
                    target: h10.clone(),
                },
                PairConstraint {
                    i: MINUS_X,
                    j: CENTER,
                    target: h10,
                },
                PairConstraint {
                    i: CENTER,
                    j: PLUS_Y,
                    target: h01.clone(),
                },
                PairConstraint {
                    i: MINUS_Y,
                    j: CENTER,
                    target: h01,
                },
            ],
        )
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn pairs(&self) -> &[PairConstraint] {
        &self.pairs
    }

    /// Largest absolute deviation between `p`'s pair marginals and targets.
    pub fn max_deviation(&self, p: &PatternPmf) -> f64 {
        self.pairs
            .iter()
            .map(|c| {
                marginalize(p, c.i, c.j)
                    .iter()
                    .zip(&c.target)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }
}

/// Joint pmf of positions `(i, j)`, flattened as `[a * k + b]`.
pub fn marginalize(p: &PatternPmf, i: usize, j: usize) -> Vec<f64> {
    let k = p.k;
    let (si, sj) = (k.pow(i as u32), k.pow(j as u32));
    let mut m = vec![0.0; k * k];
    for (idx, &w) in p.table.iter().enumerate() {
        m[((idx / si) % k) * k + (idx / sj) % k] += w;
    }
    m
}

/// I-projection of `p` onto the set of pmfs whose `(i, j)` marginal is `pi`.
pub fn ipf_project(p: &PatternPmf, i: usize, j: usize, pi: &[f64]) -> Result<PatternPmf> {
    let mut q = p.clone();
    project_in_place(&mut q, i, j, pi)?;
    Ok(q)
}

fn project_in_place(p: &mut PatternPmf, i: usize, j: usize, pi: &[f64]) -> Result<()> {
    let k = p.k;
    if pi.len() != k * k {
        return Err(Error::LengthMismatch(pi.len(), k * k));
    }
    let m = marginalize(p, i, j);
    let mut ratio = vec![0.0; k * k];
    for cell in 0..k * k {
        if m[cell] > 0.0 {
            ratio[cell] = pi[cell] / m[cell];
        } else if pi[cell] > 0.0 {
            return Err(Error::AbsoluteContinuityViolation { cell });
        }
    }
    let (si, sj) = (k.pow(i as u32), k.pow(j as u32));
    for (idx, w) in p.table.iter_mut().enumerate() {
        *w *= ratio[((idx / si) % k) * k + (idx / sj) % k];
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepOrder {
    /// Constraints visited in the order given, every sweep.
    #[default]
    Cyclic,
    /// Each step projects onto a uniformly drawn constraint; a sweep is
    /// `|pairs|` such steps.
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IpfOptions {
    pub max_sweeps: usize,
    pub tol: f64,
    pub order: SweepOrder,
}

impl Default for IpfOptions {
    fn default() -> Self {
        IpfOptions {
            max_sweeps: 100_000,
            tol: 1e-10,
            order: SweepOrder::Cyclic,
        }
    }
}

/// Fitted pattern plus the sweep count used.
#[derive(Clone, Debug)]
pub struct IpfFit {
    pub pmf: PatternPmf,
    pub sweeps: usize,
    pub deviation: f64,
}

/// Iterative proportional fitting from `init`. Fails with
/// [`Error::NotConverged`] carrying the best iterate if the marginal
/// deviation is still above `tol` after `max_sweeps` sweeps.
pub fn deming_stephan<R: Rng + ?Sized>(
    spec: &PatternSpec,
    init: &PatternPmf,
    opts: IpfOptions,
    rng: &mut R,
) -> Result<IpfFit> {
    if init.k != spec.k {
        return Err(Error::LengthMismatch(init.k, spec.k));
    }
    let mut p = init.clone();
    let mut best = (f64::INFINITY, p.clone());
    let mut order: Vec<usize> = (0..spec.pairs.len()).collect();
    for sweep in 1..=opts.max_sweeps.max(1) {
        match opts.order {
            SweepOrder::Cyclic => {}
            SweepOrder::Random => {
                for slot in order.iter_mut() {
                    *slot = rng.random_range(0..spec.pairs.len());
                }
            }
        }
        for &c in &order {
            let pc = &spec.pairs[c];
            project_in_place(&mut p, pc.i, pc.j, &pc.target)?;
        }
        let dev = spec.max_deviation(&p);
        if dev <= opts.tol {
            return Ok(IpfFit {
                pmf: p,
                sweeps: sweep,
                deviation: dev,
            });
        }
        if dev < best.0 {
            best = (dev, p.clone());
        }
        if sweep >= opts.max_sweeps {
            break;
        }
    }
    Err(Error::NotConverged {
        deviation: best.0,
        sweeps: opts.max_sweeps,
        best: Box::new(best.1),
    })
}

/// Shuffled cyclic fitting: a fresh constraint permutation every sweep.
pub fn deming_stephan_shuffled<R: Rng + ?Sized>(
    spec: &PatternSpec,
    init: &PatternPmf,
    opts: IpfOptions,
    rng: &mut R,
) -> Result<IpfFit> {
    let mut pairs = spec.pairs.clone();
    pairs.shuffle(rng);
    let shuffled = PatternSpec { k: spec.k, pairs };
    deming_stephan(
        &shuffled,
        init,
        IpfOptions {
            order: SweepOrder::Cyclic,
            ..opts
        },
        rng,
    )
}

/// `-sum p ln p` with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// `sum q ln(q / p)`; `+inf` when `q > 0` where `p = 0`.
pub fn kl_divergence(q: &[f64], p: &[f64]) -> f64 {
    let mut d = 0.0;
    for (&a, &b) in q.iter().zip(p) {
        if a > 0.0 {
            if b <= 0.0 {
                return f64::INFINITY;
            }
            d += a * (a / b).ln();
        }
    }
    d.max(0.0)
}

/// Expected divergence between the conditionals of `q` and `p` given the
/// `(i, j)` pair, weighted by `q`'s pair marginal.
pub fn conditional_divergence(q: &PatternPmf, p: &PatternPmf, i: usize, j: usize) -> f64 {
    let k = q.k;
    let qm = marginalize(q, i, j);
    let pm = marginalize(p, i, j);
    let (si, sj) = (k.pow(i as u32), k.pow(j as u32));
    let mut d = 0.0;
    for (idx, (&a, &b)) in q.table.iter().zip(&p.table).enumerate() {
        if a <= 0.0 {
            continue;
        }
        let cell = ((idx / si) % k) * k + (idx / sj) % k;
        if b <= 0.0 {
            return f64::INFINITY;
        }
        d += a * ((a / qm[cell]) / (b / pm[cell])).ln();
    }
    d
}

/// Empirical unit-lag tables in the marginals-file layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitLagMarginals {
    pub categories: Vec<Category>,
    pub pi_h10: Vec<Vec<f64>>,
    pub pi_h01: Vec<Vec<f64>>,
}

impl UnitLagMarginals {
    pub fn category_set(&self) -> Result<CategorySet> {
        CategorySet::new(self.categories.clone())
    }

    pub fn to_spec(&self) -> Result<PatternSpec> {
        let k = self.category_set()?.len();
        PatternSpec::from_unit_lag(k, &self.pi_h10, &self.pi_h01)
    }

    /// Transition tables counted on a `width x height` grid stored row by
    /// row (`cells[y * width + x]`), then made consistent with a stationary,
    /// isotropic latent model: each table is symmetrized and both are
    /// rescaled to share one single-site marginal. Without this step, edge
    /// effects on a finite grid make the five-point constraints infeasible.
    pub fn from_grid(categories: &CategorySet, width: usize, height: usize, cells: &[Category]) -> Result<Self> {
        if cells.len() != width * height {
            return Err(Error::LengthMismatch(cells.len(), width * height));
        }
        let k = categories.len();
        let idx: Vec<usize> = cells
            .iter()
            .map(|&c| categories.require_index(c))
            .collect::<Result<_>>()?;
        let mut h10 = vec![0.0; k * k];
        let mut h01 = vec![0.0; k * k];
        for y in 0..height {
            for x in 0..width {
                let a = idx[y * width + x];
                if x + 1 < width {
                    h10[a * k + idx[y * width + x + 1]] += 1.0;
                }
                if y + 1 < height {
                    h01[a * k + idx[(y + 1) * width + x]] += 1.0;
                }
            }
        }
        for t in [&mut h10, &mut h01] {
            let s: f64 = t.iter().sum();
            if s <= 0.0 {
                return Err(invalid("grid too small for unit-lag counts"));
            }
            t.iter_mut().for_each(|v| *v /= s);
            symmetrize(t, k);
        }
        let m10 = row_sums(&h10, k);
        let m01 = row_sums(&h01, k);
        let common: Vec<f64> = m10.iter().zip(&m01).map(|(a, b)| 0.5 * (a + b)).collect();
        fit_symmetric(&mut h10, &common, k);
        fit_symmetric(&mut h01, &common, k);
        let rows = |t: &[f64]| t.chunks(k).map(<[f64]>::to_vec).collect();
        Ok(UnitLagMarginals {
            categories: categories.labels().to_vec(),
            pi_h10: rows(&h10),
            pi_h01: rows(&h01),
        })
    }
}

fn symmetrize(t: &mut [f64], k: usize) {
    for a in 0..k {
        for b in (a + 1)..k {
            let m = 0.5 * (t[a * k + b] + t[b * k + a]);
            t[a * k + b] = m;
            t[b * k + a] = m;
        }
    }
}

fn row_sums(t: &[f64], k: usize) -> Vec<f64> {
    t.chunks(k).map(|r| r.iter().sum()).collect()
}

/// Two-dimensional IPF of a symmetric table to equal row and column sums.
fn fit_symmetric(t: &mut [f64], target: &[f64], k: usize) {
    for _ in 0..10_000 {
        let r = row_sums(t, k);
        for a in 0..k {
            if r[a] > 0.0 {
                let f = target[a] / r[a];
                t[a * k..(a + 1) * k].iter_mut().for_each(|v| *v *= f);
            }
        }
        let mut c = vec![0.0; k];
        for a in 0..k {
            for b in 0..k {
                c[b] += t[a * k + b];
            }
        }
        for b in 0..k {
            if c[b] > 0.0 {
                let f = target[b] / c[b];
                (0..k).for_each(|a| t[a * k + b] *= f);
            }
        }
        symmetrize(t, k);
        let r = row_sums(t, k);
        if r.iter().zip(target).all(|(a, b)| (a - b).abs() < 1e-15) {
            break;
        }
    }
    let s: f64 = t.iter().sum();
    t.iter_mut().for_each(|v| *v /= s);
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp1};

    fn random_pmf(k: usize, rng: &mut ChaCha8Rng) -> PatternPmf {
        let w: Vec<f64> = (0..k.pow(5)).map(|_| Exp1.sample(rng)).collect();
        PatternPmf::from_weights(k, w).unwrap()
    }

    fn random_pair_pmf(k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let w: Vec<f64> = (0..k * k).map(|_| Exp1.sample(rng)).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect()
    }

    fn unit_lag_of(p: &PatternPmf) -> PatternSpec {
        let pairs = [(CENTER, PLUS_X), (MINUS_X, CENTER), (CENTER, PLUS_Y), (MINUS_Y, CENTER)]
            .into_iter()
            .map(|(i, j)| PairConstraint {
                i,
                j,
                target: marginalize(p, i, j),
            })
            .collect();
        PatternSpec::new(p.k(), pairs).unwrap()
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(5)
    }

    #[test]
    fn index_round_trip() {
        let k: usize = 3;
        for idx in 0..k.pow(5) {
            assert_eq!(tuple_index(k, index_tuple(k, idx)), idx);
        }
        assert_eq!(tuple_index(4, [1, 0, 0, 0, 0]), 1);
        assert_eq!(tuple_index(4, [0, 0, 0, 0, 1]), 256);
    }

    #[test]
    fn marginalize_uniform_and_point_mass() {
        let u = PatternPmf::uniform(3);
        for m in marginalize(&u, 1, 4) {
            assert!((m - 1.0 / 9.0).abs() < 1e-15);
        }
        let p = PatternPmf::point_mass(3, [2, 0, 1, 1, 0]);
        let m = marginalize(&p, 0, 2);
        assert_eq!(m[2 * 3 + 1], 1.0);
        assert_eq!(m.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn marginalize_matches_nested_loops() {
        let mut r = rng();
        let k = 3;
        let p = random_pmf(k, &mut r);
        for (i, j) in [(0, 1), (3, 2), (4, 0)] {
            let m = marginalize(&p, i, j);
            let mut oracle = vec![0.0; k * k];
            for a in 0..k {
                for b in 0..k {
                    for z0 in 0..k {
                        for z1 in 0..k {
                            for z2 in 0..k {
                                for z3 in 0..k {
                                    for z4 in 0..k {
                                        let t = [z0, z1, z2, z3, z4];
                                        if t[i] == a && t[j] == b {
                                            oracle[a * k + b] += p.prob(t);
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            for (x, y) in m.iter().zip(&oracle) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn projection_fixed_point_and_closed_form() {
        let mut r = rng();
        let p = random_pmf(2, &mut r);
        let m = marginalize(&p, 0, 1);
        let q = ipf_project(&p, 0, 1, &m).unwrap();
        for (a, b) in p.table().iter().zip(q.table()) {
            assert!((a - b).abs() < 1e-15);
        }

        // Independent uniform pattern, setting the (0, 1) marginal gives the
        // target times uniform on the other three positions.
        let u = PatternPmf::uniform(2);
        let pi = [0.4, 0.1, 0.2, 0.3];
        let q = ipf_project(&u, 0, 1, &pi).unwrap();
        for idx in 0..32 {
            let t = index_tuple(2, idx);
            assert!((q.table()[idx] - pi[t[0] * 2 + t[1]] / 8.0).abs() < 1e-16);
        }
    }

    #[test]
    fn projection_hits_target() {
        let mut r = rng();
        let p = random_pmf(4, &mut r);
        let pi = random_pair_pmf(4, &mut r);
        let q = ipf_project(&p, 3, 1, &pi).unwrap();
        for (a, b) in marginalize(&q, 3, 1).iter().zip(&pi) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn absolute_continuity_violation() {
        let p = PatternPmf::point_mass(2, [0; 5]);
        let err = ipf_project(&p, 0, 1, &[0.5, 0.5, 0.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::AbsoluteContinuityViolation { cell: 1 }));
    }

    #[test]
    fn csiszar_criterion_on_feasible_q() {
        let mut r = rng();
        for _ in 0..100 {
            let k = 2 + r.random_range(0..2);
            let p = random_pmf(k, &mut r);
            let pi = random_pair_pmf(k, &mut r);
            let ps = ipf_project(&p, 0, 3, &pi).unwrap();
            let q = ipf_project(&random_pmf(k, &mut r), 0, 3, &pi).unwrap();
            let lhs = kl_divergence(q.table(), p.table());
            let rhs = kl_divergence(q.table(), ps.table()) + kl_divergence(ps.table(), p.table());
            assert!(lhs >= rhs - 1e-12);
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn divergence_decomposition_identities() {
        let mut r = rng();
        for _ in 0..100 {
            let k = 2 + r.random_range(0..2);
            let i = r.random_range(0..5);
            let j = (i + 1 + r.random_range(0..4)) % 5;
            let p = random_pmf(k, &mut r);
            let q = random_pmf(k, &mut r);
            let full = kl_divergence(q.table(), p.table());
            let parts =
                conditional_divergence(&q, &p, i, j) + kl_divergence(&marginalize(&q, i, j), &marginalize(&p, i, j));
            assert!((full - parts).abs() < 1e-12);

            let pi = random_pair_pmf(k, &mut r);
            let ps = ipf_project(&p, i, j, &pi).unwrap();
            let lhs = kl_divergence(ps.table(), p.table());
            assert!((lhs - kl_divergence(&pi, &marginalize(&p, i, j))).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_targets_converge_in_one_sweep() {
        let spec = unit_lag_of(&PatternPmf::uniform(3));
        let fit = deming_stephan(&spec, &PatternPmf::uniform(3), IpfOptions::default(), &mut rng()).unwrap();
        assert_eq!(fit.sweeps, 1);
        assert!(fit.pmf.table().iter().all(|&x| (x - 1.0 / 243.0).abs() < 1e-15));
    }

    #[test]
    fn single_constraint_exact_after_one_projection() {
        let pi = vec![0.1, 0.2, 0.3, 0.4];
        let spec = PatternSpec::new(
            2,
            vec![PairConstraint {
                i: 0,
                j: 1,
                target: pi.clone(),
            }],
        )
        .unwrap();
        let fit = deming_stephan(&spec, &PatternPmf::uniform(2), IpfOptions::default(), &mut rng()).unwrap();
        assert_eq!(fit.sweeps, 1);
        assert!(spec.max_deviation(&fit.pmf) < 1e-15);
    }

    #[test]
    fn reproduces_generating_marginals_with_more_entropy() {
        let mut r = rng();
        let p0 = random_pmf(4, &mut r);
        let spec = unit_lag_of(&p0);
        let fit = deming_stephan(&spec, &PatternPmf::uniform(4), IpfOptions::default(), &mut r).unwrap();
        assert!(spec.max_deviation(&fit.pmf) < 1e-8);
        assert!(fit.pmf.entropy() >= p0.entropy() - 1e-12);
    }

    #[test]
    fn sweep_order_does_not_matter() {
        let mut r = rng();
        let p0 = random_pmf(3, &mut r);
        let spec = unit_lag_of(&p0);
        let init = PatternPmf::uniform(3);
        let a = deming_stephan(&spec, &init, IpfOptions::default(), &mut r).unwrap();
        let b = deming_stephan_shuffled(&spec, &init, IpfOptions::default(), &mut r).unwrap();
        let c = deming_stephan(
            &spec,
            &init,
            IpfOptions {
                order: SweepOrder::Random,
                ..IpfOptions::default()
            },
            &mut r,
        )
        .unwrap();
        for ((x, y), z) in a.pmf.table().iter().zip(b.pmf.table()).zip(c.pmf.table()) {
            assert!((x - y).abs() < 1e-8 && (x - z).abs() < 1e-8);
        }
    }

    #[test]
    fn fitted_pattern_is_in_exponential_family() {
        let mut r = rng();
        let k = 3;
        let p0 = random_pmf(k, &mut r);
        let spec = unit_lag_of(&p0);
        let init = PatternPmf::uniform(k);
        let fit = deming_stephan(&spec, &init, IpfOptions::default(), &mut r).unwrap();
        let n = k.pow(5);
        let cols = 1 + spec.pairs().len() * k * k;
        let mut a = DMatrix::<f64>::zeros(n, cols);
        let mut b = DVector::<f64>::zeros(n);
        for idx in 0..n {
            let t = index_tuple(k, idx);
            a[(idx, 0)] = 1.0;
            for (c, pc) in spec.pairs().iter().enumerate() {
                a[(idx, 1 + c * k * k + t[pc.i] * k + t[pc.j])] = 1.0;
            }
            b[idx] = fit.pmf.table()[idx].ln() - init.table()[idx].ln();
        }
        // Normal equations through a rank-revealing decomposition.
        let ata = a.transpose() * &a;
        let atb = a.transpose() * &b;
        let sol = ata.svd(true, true).solve(&atb, 1e-9).unwrap();
        let residual = (&a * sol - &b).amax();
        assert!(residual < 1e-8, "residual {residual}");
    }

    #[test]
    fn infeasible_targets_report_best_iterate() {
        // Center marginal (0.9, 0.1) from +x but (0.1, 0.9) from +y.
        let spec = PatternSpec::from_unit_lag(2, &[vec![0.9, 0.0], vec![0.0, 0.1]], &[vec![0.1, 0.0], vec![0.0, 0.9]])
            .unwrap();
        let opts = IpfOptions {
            max_sweeps: 50,
            ..IpfOptions::default()
        };
        match deming_stephan(&spec, &PatternPmf::uniform(2), opts, &mut rng()) {
            Err(Error::NotConverged {
                deviation,
                sweeps,
                best,
            }) => {
                assert_eq!(sweeps, 50);
                assert!(deviation > 0.1);
                assert_eq!(best.k(), 2);
            }
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }

    #[test]
    fn entropy_and_divergence_values() {
        assert_eq!(PatternPmf::point_mass(4, [1, 2, 3, 0, 1]).entropy(), 0.0);
        assert!((PatternPmf::uniform(4).entropy() - 1024f64.ln()).abs() < 1e-12);
        let u = PatternPmf::uniform(4);
        let pm = PatternPmf::point_mass(4, [0; 5]);
        assert!((kl_divergence(pm.table(), u.table()) - 1024f64.ln()).abs() < 1e-12);
        assert_eq!(kl_divergence(u.table(), pm.table()), f64::INFINITY);
        assert_eq!(kl_divergence(u.table(), u.table()), 0.0);

        let mut r = rng();
        let p = random_pmf(2, &mut r);
        let q = random_pmf(2, &mut r);
        let mut h = 0.0;
        let mut d = 0.0;
        for idx in 0..32 {
            h -= p.table()[idx] * p.table()[idx].ln();
            d += q.table()[idx] * (q.table()[idx].ln() - p.table()[idx].ln());
        }
        assert!((p.entropy() - h).abs() < 1e-14);
        assert!((kl_divergence(q.table(), p.table()) - d).abs() < 1e-14);
        assert!(d >= 0.0);
    }

    #[test]
    fn grid_marginals_are_feasible() {
        let mut r = rng();
        let cats = CategorySet::range(3);
        let (w, h) = (30, 20);
        let cells: Vec<Category> = (0..w * h).map(|_| r.random_range(0..3)).collect();
        let m = UnitLagMarginals::from_grid(&cats, w, h, &cells).unwrap();
        for t in [&m.pi_h10, &m.pi_h01] {
            let s: f64 = t.iter().flatten().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let spec = m.to_spec().unwrap();
        let fit = deming_stephan(&spec, &PatternPmf::uniform(3), IpfOptions::default(), &mut r).unwrap();
        assert!(spec.max_deviation(&fit.pmf) <= 1e-10);
    }

    #[test]
    fn validation_errors() {
        assert!(PatternPmf::from_table(2, vec![0.5; 31]).is_err());
        assert!(PatternPmf::from_table(2, vec![0.1; 32]).is_err());
        assert!(PatternSpec::new(
            2,
            vec![PairConstraint {
                i: 0,
                j: 0,
                target: vec![0.25; 4]
            }]
        )
        .is_err());
        assert!(PatternSpec::new(
            2,
            vec![PairConstraint {
                i: 0,
                j: 5,
                target: vec![0.25; 4]
            }]
        )
        .is_err());
        assert!(PatternSpec::from_unit_lag(2, &[vec![1.0]], &[vec![1.0]]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn divergence_is_nonnegative(seed in any::<u64>(), k in 1usize..4) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let p = random_pmf(k, &mut r);
            let q = random_pmf(k, &mut r);
            prop_assert!(kl_divergence(q.table(), p.table()) >= 0.0);
            prop_assert!(p.entropy() >= 0.0);
            prop_assert!(p.entropy() <= (k.pow(5) as f64).ln() + 1e-12);
        }
    }
}
