//! Logarithmic scores of predictive distributions on unordered data.
//!
//! For each observed site `d`, random subsets of the remaining observations
//! are drawn (each site kept with probability 1/2). The latent pair is
//! conditioned on the subset, kriged to `d`, mapped to a category, and the
//! resulting empirical pmf is scored at the observed category.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grf::{CovarianceModel, SimpleKriging};
use crate::rng::{stream, Purpose};
use crate::sampler::{ConditionalConfig, ConditionalSampler, Event};
use crate::tessellation::{Category, CategoryRegions, TruncationMap};

/// `ln p[c]`.
pub fn log_score(p: &[f64], c: usize) -> f64 {
    p[c].ln()
}

/// Add-one smoothing: `(count_c + 1) / (m + |C|)`.
pub fn smoothed_pmf(counts: &[usize]) -> Vec<f64> {
    let m: usize = counts.iter().sum();
    let denom = (m + counts.len()) as f64;
    counts.iter().map(|&c| (c as f64 + 1.0) / denom).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplicateMode {
    /// Replicates thinned evenly from one conditional chain after burn-in.
    #[default]
    Thinned,
    /// One conditional chain per replicate, using its final state.
    Independent,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictConfig {
    pub replicates: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub warmup: usize,
    pub inner_sweeps: usize,
    pub continuation_scans: usize,
    pub mode: ReplicateMode,
}

impl Default for PredictConfig {
    fn default() -> Self {
        PredictConfig {
            replicates: 50,
            iterations: 200,
            burn_in: 100,
            warmup: 5,
            inner_sweeps: 3,
            continuation_scans: 2,
            mode: ReplicateMode::Thinned,
        }
    }
}

impl PredictConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(invalid("replicates must be at least 1"));
        }
        Ok(())
    }

    /// Chain-length check, needed only when there is something to condition on.
    pub fn validate_chain(&self) -> Result<()> {
        if self.mode == ReplicateMode::Thinned && self.iterations.saturating_sub(self.burn_in) < self.replicates {
            return Err(invalid(format!(
                "{} post-burn-in iterations cannot supply {} thinned replicates",
                self.iterations.saturating_sub(self.burn_in),
                self.replicates
            )));
        }
        Ok(())
    }

    fn chain(&self) -> ConditionalConfig {
        ConditionalConfig {
            iterations: self.iterations,
            warmup: self.warmup,
            inner_sweeps: self.inner_sweeps,
            continuation_scans: self.continuation_scans,
        }
    }
}

/// Map, its regions and the latent covariance models.
pub struct Predictor<'a> {
    pub map: &'a TruncationMap,
    pub regions: &'a CategoryRegions,
    pub cov_x: CovarianceModel,
    pub cov_y: CovarianceModel,
}

impl Predictor<'_> {
    /// Smoothed predictive pmf of the category at `d` given `subset`.
    pub fn predict_at<R: Rng + ?Sized>(
        &self,
        d: (i64, i64),
        subset: &Event,
        cfg: &PredictConfig,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        cfg.validate()?;
        let k = self.map.categories().len();
        let mut counts = vec![0usize; k];
        if subset.is_empty() {
            for _ in 0..cfg.replicates {
                let (x, y): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
                counts[self.map.map_point_index(x, y)] += 1;
            }
            return Ok(smoothed_pmf(&counts));
        }
        cfg.validate_chain()?;
        let kx = SimpleKriging::new(subset.sites().clone(), self.cov_x)?.weights(d)?;
        let ky = SimpleKriging::new(subset.sites().clone(), self.cov_y)?.weights(d)?;
        let draw = |x: &[f64], y: &[f64], rng: &mut R, counts: &mut [usize]| {
            let zx: f64 = rng.sample(StandardNormal);
            let zy: f64 = rng.sample(StandardNormal);
            let xd = kx.mean(x) + kx.variance.sqrt() * zx;
            let yd = ky.mean(y) + ky.variance.sqrt() * zy;
            counts[self.map.map_point_index(xd, yd)] += 1;
        };
        let mut sampler = ConditionalSampler::new(self.map, self.regions, subset, &self.cov_x, &self.cov_y)?;
        match cfg.mode {
            ReplicateMode::Thinned => {
                let post = cfg.iterations - cfg.burn_in;
                let step = post / cfg.replicates;
                let keep = |it: usize| {
                    it > cfg.burn_in
                        && (it - cfg.burn_in).is_multiple_of(step)
                        && (it - cfg.burn_in) / step <= cfg.replicates
                };
                let mut states = Vec::with_capacity(cfg.replicates);
                sampler.run(&cfg.chain(), rng, |s| {
                    if keep(s.k) {
                        states.push((s.x.clone(), s.y.clone()));
                    }
                })?;
                for (x, y) in &states {
                    draw(x, y, rng, &mut counts);
                }
            }
            ReplicateMode::Independent => {
                for _ in 0..cfg.replicates {
                    let run = sampler.run(&cfg.chain(), rng, |_| {})?;
                    draw(&run.state.x, &run.state.y, rng, &mut counts);
                }
            }
        }
        Ok(smoothed_pmf(&counts))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreConfig {
    pub n_subsets: usize,
    pub predict: PredictConfig,
    /// Worker threads for the per-site loop; results do not depend on it.
    pub threads: usize,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            n_subsets: 50,
            predict: PredictConfig::default(),
            threads: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteScore {
    pub x: i64,
    pub y: i64,
    pub category: Category,
    /// Mean log score over the subsets.
    pub score: f64,
    /// Predictive pmf averaged over the subsets.
    pub predictive: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub total: f64,
    pub per_site: Vec<SiteScore>,
    pub config: ScoreConfig,
}

/// Per-site predictive pmfs averaged over random subsets.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveEstimate {
    pub pmfs: Vec<Vec<f64>>,
    pub subsets: usize,
    pub replicates: usize,
}

impl ScoreReport {
    pub fn predictive(&self) -> PredictiveEstimate {
        PredictiveEstimate {
            pmfs: self.per_site.iter().map(|s| s.predictive.clone()).collect(),
            subsets: self.config.n_subsets,
            replicates: self.config.predict.replicates,
        }
    }
}

/// Sum over observed sites of the mean log score of the predictive pmf on
/// random subsets of the other observations.
///
/// Sites are processed in sorted coordinate order and each site draws from
/// its own stream, so the result is independent of the order of the event
/// and of the thread count.
pub fn unordered_score(
    map: &TruncationMap,
    cov_x: &CovarianceModel,
    cov_y: &CovarianceModel,
    event: &Event,
    cfg: &ScoreConfig,
    seed: u64,
) -> Result<ScoreReport> {
    if event.is_empty() {
        return Err(invalid("cannot score an empty event"));
    }
    cfg.predict.validate()?;
    if event.len() > 1 {
        cfg.predict.validate_chain()?;
    }
    let regions = map.triangulate()?;
    let predictor = Predictor {
        map,
        regions: &regions,
        cov_x: *cov_x,
        cov_y: *cov_y,
    };

    let mut order: Vec<usize> = (0..event.len()).collect();
    order.sort_by_key(|&i| event.sites().sites()[i]);
    let sorted = event.subset(&order);

    let site_score = |d: usize| -> Result<SiteScore> {
        let (x, y) = sorted.sites().sites()[d];
        let c = sorted.categories()[d];
        let ci = map.categories().require_index(c)?;
        let mut rng = stream(seed, Purpose::Scoring, d as u64);
        let k = map.categories().len();
        let mut total = 0.0;
        let mut mean_pmf = vec![0.0; k];
        for _ in 0..cfg.n_subsets.max(1) {
            let keep: Vec<usize> = (0..sorted.len()).filter(|&i| i != d && rng.random::<bool>()).collect();
            let pmf = predictor.predict_at((x, y), &sorted.subset(&keep), &cfg.predict, &mut rng)?;
            total += log_score(&pmf, ci);
            mean_pmf.iter_mut().zip(&pmf).for_each(|(a, b)| *a += b);
        }
        let n = cfg.n_subsets.max(1) as f64;
        mean_pmf.iter_mut().for_each(|a| *a /= n);
        Ok(SiteScore {
            x,
            y,
            category: c,
            score: total / n,
            predictive: mean_pmf,
        })
    };

    let sorted_scores: Vec<SiteScore> = if cfg.threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| invalid(e.to_string()))?;
        pool.install(|| (0..sorted.len()).into_par_iter().map(site_score).collect::<Result<_>>())?
    } else {
        (0..sorted.len()).map(site_score).collect::<Result<_>>()?
    };

    // Summed in sorted order so the total is bit-identical for any event order.
    let total = sorted_scores.iter().map(|s| s.score).sum();
    let mut per_site = sorted_scores.clone();
    for (pos, &orig) in order.iter().enumerate() {
        per_site[orig] = sorted_scores[pos].clone();
    }
    Ok(ScoreReport {
        total,
        per_site,
        config: *cfg,
    })
}
