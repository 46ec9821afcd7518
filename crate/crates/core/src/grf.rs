//! Stationary Gaussian vectors on integer grid sites: covariance models,
//! Cholesky factorizations, unconditional simulation and simple kriging.

use std::collections::HashSet;
use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Jitter ladder for factorizations: 1e-12, 1e-11, ..., 1e-6.
pub const JITTER_LADDER: [f64; 7] = [1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceKind {
    Gaussian,
    Exponential,
    Spherical,
}

/// How the range parameter scales distance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RangeConvention {
    /// `exp(-(h/a)^2)`, `exp(-h/a)`; spherical support radius `a`.
    #[default]
    #[serde(rename = "exp_minus_h_over_a_sq")]
    ScaleParameter,
    /// Practical range: correlation about 0.05 at `h = a` (`exp(-3(h/a)^2)`,
    /// `exp(-3h/a)`); spherical unchanged.
    #[serde(rename = "practical_range")]
    PracticalRange,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceModel {
    pub kind: CovarianceKind,
    pub range: f64,
    #[serde(default)]
    pub range_convention: RangeConvention,
}

impl CovarianceModel {
    pub fn new(kind: CovarianceKind, range: f64) -> Result<Self> {
        let m = CovarianceModel {
            kind,
            range,
            range_convention: RangeConvention::default(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn gaussian(range: f64) -> Result<Self> {
        Self::new(CovarianceKind::Gaussian, range)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.range > 0.0) || !self.range.is_finite() {
            return Err(invalid(format!(
                "covariance range must be positive, got {}",
                self.range
            )));
        }
        Ok(())
    }

    /// Correlation at distance `h` (unit sill).
    pub fn correlation(&self, h: f64) -> f64 {
        let r = h / self.range;
        let f = match self.range_convention {
            RangeConvention::ScaleParameter => 1.0,
            RangeConvention::PracticalRange => 3.0,
        };
        match self.kind {
            CovarianceKind::Gaussian => (-f * r * r).exp(),
            CovarianceKind::Exponential => (-f * r).exp(),
            CovarianceKind::Spherical => {
                if r >= 1.0 {
                    0.0
                } else {
                    1.0 - 1.5 * r + 0.5 * r * r * r
                }
            }
        }
    }

    pub fn between(&self, a: (i64, i64), b: (i64, i64)) -> f64 {
        let dx = (a.0 - b.0) as f64;
        let dy = (a.1 - b.1) as f64;
        self.correlation(dx.hypot(dy))
    }
}

/// Distinct integer grid locations.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct SiteSet {
    sites: Vec<(i64, i64)>,
}

impl SiteSet {
    pub fn new(sites: Vec<(i64, i64)>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(sites.len());
        for &s in &sites {
            if !seen.insert(s) {
                return Err(invalid(format!("duplicate site ({}, {})", s.0, s.1)));
            }
        }
        Ok(SiteSet { sites })
    }

    /// Full `width x height` grid with 1-based coordinates, listed row by
    /// row: site `(x, y)` sits at position `(y - 1) * width + (x - 1)`.
    pub fn grid(width: usize, height: usize) -> Self {
        let mut sites = Vec::with_capacity(width * height);
        for y in 1..=height as i64 {
            for x in 1..=width as i64 {
                sites.push((x, y));
            }
        }
        SiteSet { sites }
    }

    pub fn sites(&self) -> &[(i64, i64)] {
        &self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn position(&self, s: (i64, i64)) -> Option<usize> {
        self.sites.iter().position(|&t| t == s)
    }

    pub fn subset(&self, idx: &[usize]) -> SiteSet {
        SiteSet {
            sites: idx.iter().map(|&i| self.sites[i]).collect(),
        }
    }
}

/// Paired latent vectors on a site set.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentField {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl LatentField {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::LengthMismatch(x.len(), y.len()));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(invalid("latent field has non-finite values"));
        }
        Ok(LatentField { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

pub fn covariance_matrix(sites: &SiteSet, model: &CovarianceModel) -> DMatrix<f64> {
    let n = sites.len();
    let s = sites.sites();
    DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { model.between(s[i], s[j]) })
}

pub fn cross_covariance(sites: &SiteSet, model: &CovarianceModel, target: (i64, i64)) -> DVector<f64> {
    DVector::from_iterator(sites.len(), sites.sites().iter().map(|&s| model.between(s, target)))
}

/// Cholesky factor of `C + jitter I` with the smallest working jitter.
#[derive(Clone, Debug)]
pub struct Factorization {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

impl Factorization {
    pub fn new(c: &DMatrix<f64>) -> Result<Self> {
        for &jitter in &JITTER_LADDER {
            let mut m = c.clone();
            for i in 0..m.nrows() {
                m[(i, i)] += jitter;
            }
            if let Some(chol) = Cholesky::new(m) {
                return Ok(Factorization { chol, jitter });
            }
        }
        Err(Error::FactorizationFailure(JITTER_LADDER[JITTER_LADDER.len() - 1]))
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    /// Log density of `N(0, C)` at `v`.
    pub fn log_density(&self, v: &[f64]) -> f64 {
        let n = v.len();
        let dv = DVector::from_column_slice(v);
        let q = dv.dot(&self.solve(&dv));
        -0.5 * (q + self.log_det() + n as f64 * (2.0 * PI).ln())
    }

    /// `L z` for a standard-normal vector `z`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.dim();
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        (self.chol.l_dirty().lower_triangle() * z).as_slice().to_vec()
    }
}

pub fn simulate_unconditional<R: Rng + ?Sized>(
    sites: &SiteSet,
    model: &CovarianceModel,
    rng: &mut R,
) -> Result<Vec<f64>> {
    Ok(Factorization::new(&covariance_matrix(sites, model))?.draw(rng))
}

/// Simple-kriging system for a fixed conditioning set.
#[derive(Clone, Debug)]
pub struct SimpleKriging {
    sites: SiteSet,
    model: CovarianceModel,
    factor: Option<Factorization>,
}

/// Weights and variance for one target; the mean is `weights . values`.
#[derive(Clone, Debug, PartialEq)]
pub struct KrigingWeights {
    pub weights: Vec<f64>,
    pub variance: f64,
}

impl KrigingWeights {
    pub fn mean(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

impl SimpleKriging {
    pub fn new(sites: SiteSet, model: CovarianceModel) -> Result<Self> {
        let factor = if sites.is_empty() {
            None
        } else {
            Some(Factorization::new(&covariance_matrix(&sites, &model))?)
        };
        Ok(SimpleKriging { sites, model, factor })
    }

    pub fn weights(&self, target: (i64, i64)) -> Result<KrigingWeights> {
        if self.sites.position(target).is_some() {
            return Err(invalid(format!(
                "target ({}, {}) is a conditioning site",
                target.0, target.1
            )));
        }
        let Some(f) = &self.factor else {
            return Ok(KrigingWeights {
                weights: Vec::new(),
                variance: 1.0,
            });
        };
        let c0 = cross_covariance(&self.sites, &self.model, target);
        let w = f.solve(&c0);
        let variance = (1.0 - c0.dot(&w)).clamp(0.0, 1.0);
        Ok(KrigingWeights {
            weights: w.as_slice().to_vec(),
            variance,
        })
    }

    pub fn krige(&self, values: &[f64], target: (i64, i64)) -> Result<(f64, f64)> {
        if values.len() != self.sites.len() {
            return Err(Error::LengthMismatch(values.len(), self.sites.len()));
        }
        let w = self.weights(target)?;
        Ok((w.mean(values), w.variance))
    }
}

/// Simple-kriging mean and variance at `target`.
pub fn krige(
    cond_sites: &SiteSet,
    cond_values: &[f64],
    model: &CovarianceModel,
    target: (i64, i64),
) -> Result<(f64, f64)> {
    SimpleKriging::new(cond_sites.clone(), *model)?.krige(cond_values, target)
}

/// Conditional simulation at `targets` given exact values at `cond_sites`.
///
/// Draws the pair jointly without conditioning, then kriges the residual at
/// the conditioning sites back onto the targets.
pub fn simulate_conditional<R: Rng + ?Sized>(
    cond_sites: &SiteSet,
    cond_values: &[f64],
    targets: &SiteSet,
    model: &CovarianceModel,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if cond_values.len() != cond_sites.len() {
        return Err(Error::LengthMismatch(cond_values.len(), cond_sites.len()));
    }
    if cond_sites.is_empty() {
        return simulate_unconditional(targets, model, rng);
    }
    let n = cond_sites.len();
    let mut all = cond_sites.sites().to_vec();
    all.extend_from_slice(targets.sites());
    let joint = simulate_unconditional(&SiteSet::new(all)?, model, rng)?;
    let resid = DVector::from_iterator(n, (0..n).map(|i| cond_values[i] - joint[i]));
    let alpha = Factorization::new(&covariance_matrix(cond_sites, model))?.solve(&resid);
    Ok(targets
        .sites()
        .iter()
        .enumerate()
        .map(|(j, &t)| joint[n + j] + cross_covariance(cond_sites, model, t).dot(&alpha))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(31)
    }

    #[test]
    fn gaussian_kernel_value() {
        let m = CovarianceModel::gaussian(10.0).unwrap();
        assert!((m.correlation(10.0) - (-1.0f64).exp()).abs() < 1e-12);
        assert!((m.correlation(10.0) - 0.367879441171).abs() < 1e-9);
        assert_eq!(m.correlation(0.0), 1.0);
        let p = CovarianceModel {
            range_convention: RangeConvention::PracticalRange,
            ..m
        };
        assert!((p.correlation(10.0) - (-3.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn other_kinds() {
        let e = CovarianceModel::new(CovarianceKind::Exponential, 2.0).unwrap();
        assert!((e.correlation(2.0) - (-1.0f64).exp()).abs() < 1e-15);
        let s = CovarianceModel::new(CovarianceKind::Spherical, 4.0).unwrap();
        assert_eq!(s.correlation(4.0), 0.0);
        assert!((s.correlation(2.0) - 0.3125).abs() < 1e-15);
        assert!(CovarianceModel::gaussian(0.0).is_err());
        assert!(CovarianceModel::gaussian(f64::NAN).is_err());
    }

    #[test]
    fn covariance_json_layout() {
        let m: CovarianceModel =
            serde_json::from_str(r#"{"kind":"gaussian","range":10.0,"range_convention":"exp_minus_h_over_a_sq"}"#)
                .unwrap();
        assert_eq!(m, CovarianceModel::gaussian(10.0).unwrap());
        let d: CovarianceModel = serde_json::from_str(r#"{"kind":"spherical","range":3.0}"#).unwrap();
        assert_eq!(d.range_convention, RangeConvention::ScaleParameter);
    }

    #[test]
    fn matrix_shape() {
        let m = CovarianceModel::gaussian(3.0).unwrap();
        let one = covariance_matrix(&SiteSet::new(vec![(0, 0)]).unwrap(), &m);
        assert_eq!(one, DMatrix::from_element(1, 1, 1.0));
        let far = covariance_matrix(&SiteSet::new(vec![(0, 0), (1000, 0)]).unwrap(), &m);
        assert_eq!(far[(0, 1)], 0.0);
        let g = covariance_matrix(&SiteSet::grid(5, 5), &m);
        assert_eq!(g, g.transpose());
        assert!(SiteSet::new(vec![(1, 1), (1, 1)]).is_err());
    }

    #[test]
    fn jitter_ladder_handles_near_singular_gaussian_matrices() {
        let m = CovarianceModel::gaussian(10.0).unwrap();
        let f = Factorization::new(&covariance_matrix(&SiteSet::grid(8, 8), &m)).unwrap();
        assert!(f.jitter() <= 1e-6);
        let l = f.l();
        assert!((0..l.nrows()).all(|i| l[(i, i)] > 0.0));
    }

    #[test]
    fn indefinite_matrix_fails() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(Factorization::new(&c), Err(Error::FactorizationFailure(_))));
    }

    #[test]
    fn two_site_correlation() {
        let m = CovarianceModel::gaussian(3.0).unwrap();
        let sites = SiteSet::new(vec![(0, 0), (2, 0)]).unwrap();
        let rho = m.between((0, 0), (2, 0));
        let f = Factorization::new(&covariance_matrix(&sites, &m)).unwrap();
        let mut r = rng();
        let n = 100_000;
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let v = f.draw(&mut r);
            sxy += v[0] * v[1];
            sxx += v[0] * v[0];
            syy += v[1] * v[1];
        }
        assert!((sxy / (sxx * syy).sqrt() - rho).abs() < 0.01);
        let single = simulate_unconditional(&SiteSet::new(vec![(3, 3)]).unwrap(), &m, &mut r).unwrap();
        assert_eq!(single.len(), 1);
    }

    #[test]
    fn grid_covariance_and_mean() {
        let m = CovarianceModel::gaussian(3.0).unwrap();
        let sites = SiteSet::grid(5, 5);
        let c = covariance_matrix(&sites, &m);
        let f = Factorization::new(&c).unwrap();
        let mut r = rng();
        let n = 10_000;
        let mut acc = DMatrix::<f64>::zeros(25, 25);
        let mut mean = DVector::<f64>::zeros(25);
        for _ in 0..n {
            let v = DVector::from_vec(f.draw(&mut r));
            acc += &v * v.transpose();
            mean += v;
        }
        acc /= n as f64;
        // Relative Frobenius distance; sampling noise alone puts the absolute
        // distance near 0.3 for 625 entries at this draw count.
        let rel = (acc - &c).norm() / c.norm();
        assert!(rel <= 0.1, "relative Frobenius distance {rel}");
        for i in 0..25 {
            assert!((mean[i] / n as f64).abs() < 4.0 / (n as f64).sqrt());
        }
    }

    #[test]
    fn kriging_limits() {
        let m = CovarianceModel::gaussian(3.0).unwrap();
        assert_eq!(krige(&SiteSet::default(), &[], &m, (0, 0)).unwrap(), (0.0, 1.0));
        let sites = SiteSet::new(vec![(0, 0), (1, 0)]).unwrap();
        let (mu, var) = krige(&sites, &[1.5, -0.3], &m, (100_000, 0)).unwrap();
        assert!(mu.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        assert!(krige(&sites, &[1.0, 1.0], &m, (0, 0)).is_err());
    }

    #[test]
    fn kriging_variance_vanishes_at_the_data() {
        // Off-grid target: use a fine-scale model so one grid step acts as 1e-6.
        let m = CovarianceModel::gaussian(1e6).unwrap();
        let sites = SiteSet::new(vec![(0, 0)]).unwrap();
        let (mu, var) = krige(&sites, &[0.7], &m, (1, 0)).unwrap();
        assert!(var < 1e-6);
        assert!((mu - 0.7).abs() < 1e-6);
    }

    #[test]
    fn kriging_matches_dense_solve() {
        let m = CovarianceModel::new(CovarianceKind::Exponential, 4.0).unwrap();
        let sites = SiteSet::new(vec![(0, 0), (3, 1), (-2, 4)]).unwrap();
        let v = [0.4, -1.1, 2.0];
        let t = (1, 2);
        let (mu, var) = krige(&sites, &v, &m, t).unwrap();
        let c = covariance_matrix(&sites, &m);
        let c0 = cross_covariance(&sites, &m, t);
        let w = c.lu().solve(&c0).unwrap();
        let mu2 = w.dot(&DVector::from_column_slice(&v));
        let var2 = 1.0 - c0.dot(&w);
        assert!((mu - mu2).abs() < 1e-10 && (var - var2).abs() < 1e-10);
    }

    #[test]
    fn log_density_matches_closed_form() {
        let m = CovarianceModel::gaussian(2.0).unwrap();
        let sites = SiteSet::new(vec![(0, 0), (1, 0)]).unwrap();
        let f = Factorization::new(&covariance_matrix(&sites, &m)).unwrap();
        let rho = m.between((0, 0), (1, 0));
        let (a, b) = (0.3, -0.8);
        let det = 1.0 - rho * rho;
        let q = (a * a - 2.0 * rho * a * b + b * b) / det;
        let want = -0.5 * (q + det.ln() + 2.0 * (2.0 * PI).ln());
        assert!((f.log_density(&[a, b]) - want).abs() < 1e-9);
    }

    #[test]
    fn grid_ordering_is_row_major_and_one_based() {
        let g = SiteSet::grid(3, 2);
        assert_eq!(g.sites()[0], (1, 1));
        assert_eq!(g.sites()[4], (2, 2));
        assert_eq!(g.position((3, 2)), Some(5));
    }

    #[test]
    fn conditional_simulation_matches_kriging_moments() {
        let m = CovarianceModel::gaussian(3.0).unwrap();
        let cond = SiteSet::new(vec![(0, 0)]).unwrap();
        let tgt = SiteSet::new(vec![(1, 0), (0, 40)]).unwrap();
        let rho = (-1.0f64 / 9.0).exp();
        let mut r = rng();
        let n = 20000;
        let (mut s, mut ss, mut far) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let v = simulate_conditional(&cond, &[1.0], &tgt, &m, &mut r).unwrap();
            s += v[0];
            ss += v[0] * v[0];
            far += v[1] * v[1];
        }
        let mean = s / n as f64;
        let var = ss / n as f64 - mean * mean;
        assert!((mean - rho).abs() < 0.01, "{mean}");
        assert!((var - (1.0 - rho * rho)).abs() < 0.01, "{var}");
        assert!((far / n as f64 - 1.0).abs() < 0.05);
    }

    #[test]
    fn conditional_simulation_without_data_is_unconditional() {
        let m = CovarianceModel::gaussian(3.0).unwrap();
        let tgt = SiteSet::grid(2, 2);
        let a = simulate_conditional(&SiteSet::new(vec![]).unwrap(), &[], &tgt, &m, &mut rng()).unwrap();
        let b = simulate_unconditional(&tgt, &m, &mut rng()).unwrap();
        assert_eq!(a, b);
    }
}
