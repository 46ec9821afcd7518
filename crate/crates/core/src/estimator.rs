//! Truncation-map estimation: prior, birth/death/move proposals,
//! Monte-Carlo pattern mismatch, simulated annealing and a
//! Metropolis-Hastings sampler.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bme::{kl_divergence, PatternPmf, PATTERN_OFFSETS, PATTERN_SIZE};
use crate::error::{invalid, Result};
use crate::gauss_geom::Point2;
use crate::grf::{covariance_matrix, CovarianceModel, Factorization, SiteSet};
use crate::rng::{stream, Purpose};
use crate::tessellation::{Category, CategorySet, TruncationMap, COINCIDENCE_TOLERANCE};

/// What a move event redraws for the chosen node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MoveMode {
    #[default]
    CoordinatesAndCategory,
    CoordinatesOnly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PriorSpec {
    pub mu: f64,
    pub categories: CategorySet,
    pub move_mode: MoveMode,
}

impl PriorSpec {
    pub fn new(mu: f64, categories: CategorySet) -> Result<Self> {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(invalid(format!("prior mean node count must be positive, got {mu}")));
        }
        Ok(PriorSpec {
            mu,
            categories,
            move_mode: MoveMode::default(),
        })
    }

    /// Unnormalized weights of the proposed count `nu - 1`, `nu`, `nu + 1`,
    /// i.e. Poisson probabilities relative to `P(nu)`.
    pub fn count_weights(&self, nu: usize) -> [f64; 3] {
        let death = if nu >= 2 { nu as f64 / self.mu } else { 0.0 };
        [death, 1.0, self.mu / (nu as f64 + 1.0)]
    }

    /// Normalized death, stay and birth probabilities at count `nu`.
    pub fn count_probabilities(&self, nu: usize) -> [f64; 3] {
        let w = self.count_weights(nu);
        let s: f64 = w.iter().sum();
        [w[0] / s, w[1] / s, w[2] / s]
    }

    /// Mean of the node count (Poisson conditioned on at least one node).
    pub fn mean_node_count(&self) -> f64 {
        self.mu / (-(-self.mu).exp_m1())
    }
}

/// Log density of a node's coordinates under the prior (standard normal).
pub fn log_node_density(p: Point2) -> f64 {
    -0.5 * (p.x * p.x + p.y * p.y) - (2.0 * PI).ln()
}

fn draw_node<R: Rng + ?Sized>(rng: &mut R, existing: &[Point2]) -> Point2 {
    loop {
        let p = Point2::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
        if existing.iter().all(|q| q.dist2(p).sqrt() >= COINCIDENCE_TOLERANCE) {
            return p;
        }
    }
}

fn draw_category<R: Rng + ?Sized>(rng: &mut R, cats: &CategorySet) -> Category {
    cats.label(rng.random_range(0..cats.len()))
}

fn draw_node_count<R: Rng + ?Sized>(mu: f64, rng: &mut R) -> usize {
    if mu > 30.0 {
        let pois = Poisson::new(mu).expect("positive mean");
        loop {
            let n = pois.sample(rng) as usize;
            if n >= 1 {
                return n;
            }
        }
    }
    // Sequential inverse CDF of the zero-truncated Poisson law.
    let u: f64 = rng.random();
    let mut n = 1;
    let mut p = mu / mu.exp_m1();
    let mut cdf = p;
    while u > cdf && p > 0.0 {
        p *= mu / (n as f64 + 1.0);
        n += 1;
        cdf += p;
    }
    n
}

/// Draw from the prior: Poisson(μ) node count conditioned on at least one
/// node, iid standard-normal coordinates and uniform categories.
pub fn sample_prior<R: Rng + ?Sized>(prior: &PriorSpec, rng: &mut R) -> TruncationMap {
    let n = draw_node_count(prior.mu, rng);
    let mut nodes = Vec::with_capacity(n);
    let mut colors = Vec::with_capacity(n);
    for _ in 0..n {
        let p = draw_node(rng, &nodes);
        nodes.push(p);
        colors.push(draw_category(rng, &prior.categories));
    }
    TruncationMap::new(prior.categories.clone(), nodes, colors).expect("prior draws are valid maps")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalKind {
    Birth,
    Death,
    Move,
}

#[derive(Clone, Debug)]
pub struct Proposal {
    pub map: TruncationMap,
    pub kind: ProposalKind,
    /// `ln q(current | proposed) - ln q(proposed | current)`.
    pub log_q_ratio: f64,
}

pub fn propose<R: Rng + ?Sized>(current: &TruncationMap, prior: &PriorSpec, rng: &mut R) -> Proposal {
    let nu = current.len();
    let probs = prior.count_probabilities(nu);
    let u: f64 = rng.random();
    let k = prior.categories.len() as f64;
    let mut map = current.clone();
    if u < probs[0] {
        let i = rng.random_range(0..nu);
        let (p, _) = map.remove_node(i);
        let back = prior.count_probabilities(nu - 1)[2];
        let log_q_ratio = back.ln() + log_node_density(p) - k.ln() - (probs[0] / nu as f64).ln();
        Proposal {
            map,
            kind: ProposalKind::Death,
            log_q_ratio,
        }
    } else if u < probs[0] + probs[1] {
        let i = rng.random_range(0..nu);
        let others: Vec<Point2> = current
            .nodes()
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &p)| p)
            .collect();
        let old = current.nodes()[i];
        let p = draw_node(rng, &others);
        let c = match prior.move_mode {
            MoveMode::CoordinatesAndCategory => draw_category(rng, &prior.categories),
            MoveMode::CoordinatesOnly => current.colors()[i],
        };
        map.replace_node(i, p, c);
        let log_q_ratio = log_node_density(old) - log_node_density(p);
        Proposal {
            map,
            kind: ProposalKind::Move,
            log_q_ratio,
        }
    } else {
        let p = draw_node(rng, current.nodes());
        let c = draw_category(rng, &prior.categories);
        map.push_node(p, c);
        let back = prior.count_probabilities(nu + 1)[0] / (nu as f64 + 1.0);
        let log_q_ratio = back.ln() - (probs[2].ln() + log_node_density(p) - k.ln());
        Proposal {
            map,
            kind: ProposalKind::Birth,
            log_q_ratio,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MismatchConfig {
    /// Monte-Carlo pattern draws per evaluation.
    pub n: usize,
    pub cov_x: CovarianceModel,
    pub cov_y: CovarianceModel,
    /// Lower bound applied to the target before renormalizing (0 = none).
    pub floor: f64,
}

/// Samples latent five-point patterns and tabulates mapped categories.
#[derive(Clone, Debug)]
pub struct PatternSampler {
    lx: [[f64; PATTERN_SIZE]; PATTERN_SIZE],
    ly: [[f64; PATTERN_SIZE]; PATTERN_SIZE],
}

impl PatternSampler {
    pub fn new(cov_x: &CovarianceModel, cov_y: &CovarianceModel) -> Result<Self> {
        let sites = SiteSet::new(PATTERN_OFFSETS.to_vec())?;
        let fx = Factorization::new(&covariance_matrix(&sites, cov_x))?.l();
        let fy = Factorization::new(&covariance_matrix(&sites, cov_y))?.l();
        let mut lx = [[0.0; PATTERN_SIZE]; PATTERN_SIZE];
        let mut ly = [[0.0; PATTERN_SIZE]; PATTERN_SIZE];
        for i in 0..PATTERN_SIZE {
            for j in 0..=i {
                lx[i][j] = fx[(i, j)];
                ly[i][j] = fy[(i, j)];
            }
        }
        Ok(PatternSampler { lx, ly })
    }

    /// One latent pattern: `(x_s, y_s)` for the five positions.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> [(f64, f64); PATTERN_SIZE] {
        let mut zx = [0.0; PATTERN_SIZE];
        let mut zy = [0.0; PATTERN_SIZE];
        for s in 0..PATTERN_SIZE {
            zx[s] = rng.sample(StandardNormal);
            zy[s] = rng.sample(StandardNormal);
        }
        let mut out = [(0.0, 0.0); PATTERN_SIZE];
        for (i, o) in out.iter_mut().enumerate() {
            let (mut x, mut y) = (0.0, 0.0);
            for j in 0..=i {
                x += self.lx[i][j] * zx[j];
                y += self.ly[i][j] * zy[j];
            }
            *o = (x, y);
        }
        out
    }

    /// Category-tuple counts of `n` mapped patterns, in pattern-table order.
    pub fn tabulate<R: Rng + ?Sized>(&self, map: &TruncationMap, n: usize, rng: &mut R) -> Vec<u32> {
        let k = map.categories().len();
        let color_idx: Vec<usize> = map
            .colors()
            .iter()
            .map(|&c| map.categories().index_of(c).unwrap_or(0))
            .collect();
        let mut counts = vec![0u32; k.pow(PATTERN_SIZE as u32)];
        for _ in 0..n {
            let pat = self.draw(rng);
            let mut idx = 0;
            for &(x, y) in pat.iter().rev() {
                idx = idx * k + color_idx[map.nearest_node(x, y)];
            }
            counts[idx] += 1;
        }
        counts
    }
}

/// Evaluates `F(θ) = KL(f̂ ‖ p*)`.
#[derive(Clone, Debug)]
pub struct Mismatch {
    target: Vec<f64>,
    supported: Vec<bool>,
    k: usize,
    n: usize,
    sampler: PatternSampler,
}

impl Mismatch {
    pub fn new(p_star: &PatternPmf, cfg: &MismatchConfig) -> Result<Self> {
        if cfg.n == 0 {
            return Err(invalid("mismatch sample count must be at least 1"));
        }
        if !(cfg.floor >= 0.0) {
            return Err(invalid("mismatch floor must be nonnegative"));
        }
        let mut target = p_star.table().to_vec();
        if cfg.floor > 0.0 {
            target.iter_mut().for_each(|p| *p = p.max(cfg.floor));
            let s: f64 = target.iter().sum();
            target.iter_mut().for_each(|p| *p /= s);
        }
        let k = p_star.k();
        let mut supported = vec![false; k];
        for s in 0..PATTERN_SIZE {
            for (c, m) in p_star.single_marginal(s).into_iter().enumerate() {
                supported[c] |= m > 0.0;
            }
        }
        Ok(Mismatch {
            target,
            supported,
            k,
            n: cfg.n,
            sampler: PatternSampler::new(&cfg.cov_x, &cfg.cov_y)?,
        })
    }

    pub fn sample_count(&self) -> usize {
        self.n
    }

    pub fn sampler(&self) -> &PatternSampler {
        &self.sampler
    }

    /// `+inf` when a category supported by the target is absent from the map.
    pub fn evaluate<R: Rng + ?Sized>(&self, map: &TruncationMap, rng: &mut R) -> f64 {
        if map.categories().len() != self.k {
            return f64::INFINITY;
        }
        for (c, &sup) in self.supported.iter().enumerate() {
            if sup && !map.uses(map.categories().label(c)) {
                return f64::INFINITY;
            }
        }
        let counts = self.sampler.tabulate(map, self.n, rng);
        let f: Vec<f64> = counts.iter().map(|&c| c as f64 / self.n as f64).collect();
        kl_divergence(&f, &self.target)
    }
}

pub fn mismatch<R: Rng + ?Sized>(
    map: &TruncationMap,
    p_star: &PatternPmf,
    cfg: &MismatchConfig,
    rng: &mut R,
) -> Result<f64> {
    Ok(Mismatch::new(p_star, cfg)?.evaluate(map, rng))
}

/// Objective minimized by the chains. `index` identifies the evaluation so
/// implementations can draw from a dedicated random stream.
pub trait Objective {
    fn value(&mut self, map: &TruncationMap, index: u64) -> f64;
}

impl<F: FnMut(&TruncationMap, u64) -> f64> Objective for F {
    fn value(&mut self, map: &TruncationMap, index: u64) -> f64 {
        self(map, index)
    }
}

/// Mismatch with a fresh Monte-Carlo sample per evaluation, drawn from the
/// stream `(seed, Mismatch, index)`.
pub struct SeededMismatch<'a> {
    pub mismatch: &'a Mismatch,
    pub seed: u64,
}

impl Objective for SeededMismatch<'_> {
    fn value(&mut self, map: &TruncationMap, index: u64) -> f64 {
        self.mismatch
            .evaluate(map, &mut stream(self.seed, Purpose::Mismatch, index))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnealSchedule {
    pub t0: f64,
    pub alpha: f64,
    pub iterations: usize,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        AnnealSchedule {
            t0: 500.0,
            alpha: 0.9995,
            iterations: 9000,
        }
    }
}

impl AnnealSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.t0 > 0.0) || !self.t0.is_finite() {
            return Err(invalid(format!("T0 must be positive, got {}", self.t0)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }

    pub fn temperature(&self, n: usize) -> f64 {
        self.t0 * self.alpha.powi(n as i32)
    }
}

/// Units in which the mismatch enters the acceptance ratio.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyScale {
    /// Energy is the divergence itself.
    Divergence,
    /// Energy is `n * F`, the log-likelihood ratio of the `n` mapped
    /// patterns under the empirical law versus the target.
    #[default]
    SampleCount,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    #[serde(rename = "F")]
    pub f: f64,
    pub node_count: usize,
    pub temperature: f64,
    pub accepted: u8,
}

#[derive(Clone, Debug)]
pub struct AnnealResult {
    pub trace: Vec<TraceRow>,
    pub best: TruncationMap,
    pub best_f: f64,
    pub last: TruncationMap,
    pub last_f: f64,
    /// Current state after the listed iterations (iteration 0 = start).
    pub snapshots: Vec<(usize, TruncationMap)>,
}

#[derive(Clone, Debug, Default)]
pub struct AnnealOptions {
    pub energy_scale: EnergyScale,
    /// Sample count used by [`EnergyScale::SampleCount`].
    pub sample_count: usize,
    pub snapshots: Vec<usize>,
}

/// Acceptance probability `min(1, exp((e_c - e_n) / t))`. Moves between two
/// infinite-energy states are accepted so a chain started outside the
/// support can still wander into it.
pub fn acceptance(e_current: f64, e_new: f64, t: f64) -> f64 {
    if e_new == f64::INFINITY {
        return if e_current == f64::INFINITY { 1.0 } else { 0.0 };
    }
    if e_current == f64::INFINITY {
        return 1.0;
    }
    ((e_current - e_new) / t).exp().min(1.0)
}

/// Simulated annealing. Proposals come from the stream `(seed, Estimation,
/// 0)`; the objective is evaluated with index 0 for the start and `n + 1`
/// for the proposal of iteration `n`.
pub fn anneal<O: Objective>(
    start: &TruncationMap,
    prior: &PriorSpec,
    schedule: &AnnealSchedule,
    opts: &AnnealOptions,
    objective: &mut O,
    seed: u64,
) -> Result<AnnealResult> {
    schedule.validate()?;
    let scale = match opts.energy_scale {
        EnergyScale::Divergence => 1.0,
        EnergyScale::SampleCount => opts.sample_count.max(1) as f64,
    };
    let mut rng = stream(seed, Purpose::Estimation, 0);
    let mut current = start.clone();
    let mut f_current = objective.value(&current, 0);
    let mut best = (f_current, current.clone());
    let mut trace = Vec::with_capacity(schedule.iterations);
    let mut snapshots = Vec::new();
    if opts.snapshots.contains(&0) {
        snapshots.push((0, current.clone()));
    }
    for n in 0..schedule.iterations {
        let t = schedule.temperature(n);
        let prop = propose(&current, prior, &mut rng);
        let f_new = objective.value(&prop.map, n as u64 + 1);
        let rho = acceptance(scale * f_current, scale * f_new, t);
        let accepted = rng.random::<f64>() < rho;
        if accepted {
            current = prop.map;
            f_current = f_new;
            if f_current < best.0 {
                best = (f_current, current.clone());
            }
        }
        trace.push(TraceRow {
            iteration: n,
            f: f_current,
            node_count: current.len(),
            temperature: t,
            accepted: accepted as u8,
        });
        if opts.snapshots.contains(&(n + 1)) {
            snapshots.push((n + 1, current.clone()));
        }
    }
    Ok(AnnealResult {
        trace,
        best: best.1,
        best_f: best.0,
        last: current,
        last_f: f_current,
        snapshots,
    })
}

#[derive(Clone, Debug)]
pub struct MhStep {
    pub kind: ProposalKind,
    pub acceptance: f64,
    pub accepted: bool,
    pub f: f64,
    pub node_count: usize,
}

#[derive(Clone, Debug)]
pub struct MhResult {
    pub steps: Vec<MhStep>,
    pub last: TruncationMap,
}

/// Metropolis-Hastings at unit temperature with the birth/death/move
/// proposal-density ratio.
pub fn metropolis_hastings<O: Objective>(
    start: &TruncationMap,
    prior: &PriorSpec,
    iterations: usize,
    objective: &mut O,
    seed: u64,
) -> MhResult {
    let mut rng = stream(seed, Purpose::Estimation, 1);
    let mut current = start.clone();
    let mut f_current = objective.value(&current, 0);
    let mut steps = Vec::with_capacity(iterations);
    for n in 0..iterations {
        let prop = propose(&current, prior, &mut rng);
        let f_new = objective.value(&prop.map, n as u64 + 1);
        let rho = mh_acceptance(f_current, f_new, prop.log_q_ratio);
        let accepted = rng.random::<f64>() < rho;
        if accepted {
            current = prop.map;
            f_current = f_new;
        }
        steps.push(MhStep {
            kind: prop.kind,
            acceptance: rho,
            accepted,
            f: f_current,
            node_count: current.len(),
        });
    }
    MhResult { steps, last: current }
}

/// `min(1, exp(F_c - F_n) * q(c|n) / q(n|c))`.
pub fn mh_acceptance(f_current: f64, f_new: f64, log_q_ratio: f64) -> f64 {
    let base = acceptance(f_current, f_new, 1.0);
    if base == 0.0 {
        return 0.0;
    }
    (base.ln() + log_q_ratio).exp().min(1.0)
}
