//! Commands behind the `vtpg` binary.
//!
//! Every command reads one JSON config. Relative paths inside a config are
//! resolved against the directory holding the config file. The main output
//! goes to `--out`; auxiliary outputs are written next to it as
//! `<stem>.<what>.<ext>`.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use vtpg_core::bme::{deming_stephan, IpfOptions, PatternPmf, UnitLagMarginals};
use vtpg_core::estimator::{
    anneal, sample_prior, AnnealOptions, AnnealSchedule, EnergyScale, Mismatch, MismatchConfig, MoveMode, PriorSpec,
    SeededMismatch,
};
use vtpg_core::formats::{
    read_event, read_json, read_map, write_diagnostics, write_event, write_json, write_latent, write_map, write_trace,
    PatternFile, PATTERN_ORDERING,
};
use vtpg_core::grf::{simulate_conditional, simulate_unconditional, CovarianceModel, SiteSet};
use vtpg_core::rng::{stream, Purpose};
use vtpg_core::sampler::{ConditionalConfig, ConditionalSampler, Event, LatentState};
use vtpg_core::scoring::{unordered_score, ScoreConfig};
use vtpg_core::tessellation::{Category, CategorySet, TruncationMap};
use vtpg_core::Error as CoreError;

/// How a successful command finished.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// Outputs were written but the fit missed its tolerance.
    NotConverged,
}

impl Status {
    pub fn exit_code(self) -> u8 {
        match self {
            Status::Ok => 0,
            Status::NotConverged => 2,
        }
    }
}

/// Arguments shared by all subcommands.
#[derive(Clone, Debug)]
pub struct Invocation {
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub threads: Option<usize>,
}

impl Invocation {
    pub fn new(config: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        Invocation {
            config: config.into(),
            seed: None,
            out: out.into(),
            threads: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    fn load<T: DeserializeOwned>(&self) -> Result<(T, PathBuf)> {
        let cfg: T = read_json(&self.config).with_context(|| format!("reading config {}", self.config.display()))?;
        let base = self.config.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((cfg, base))
    }

    fn seed(&self, from_config: Option<u64>) -> u64 {
        self.seed.or(from_config).unwrap_or(0)
    }

    /// `<out stem>.<suffix>` in the directory of `--out`.
    pub fn sibling(&self, suffix: &str) -> PathBuf {
        sibling(&self.out, suffix)
    }
}

pub fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    out.with_file_name(format!("{stem}.{suffix}"))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn ensure_parent(out: &Path) -> Result<()> {
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
    }
    Ok(())
}

fn load_map(base: &Path, p: &Path) -> Result<TruncationMap> {
    let p = resolve(base, p);
    read_map(&p).with_context(|| format!("reading map {}", p.display()))
}

fn load_event(base: &Path, p: &Path) -> Result<Event> {
    let p = resolve(base, p);
    read_event(&p).with_context(|| format!("reading event {}", p.display()))
}

/// Bounding grid of an event on 1-based coordinates, as `(width, height)`.
fn grid_extent(event: &Event) -> Result<(usize, usize)> {
    let sites = event.sites().sites();
    if sites.iter().any(|&(x, y)| x < 1 || y < 1) {
        bail!("grid coordinates are 1-based; found a site with x < 1 or y < 1");
    }
    let w = sites.iter().map(|s| s.0).max().unwrap_or(0) as usize;
    let h = sites.iter().map(|s| s.1).max().unwrap_or(0) as usize;
    Ok((w, h))
}

fn distinct_labels(cats: &[Category]) -> Vec<Category> {
    cats.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
}

// ---------------------------------------------------------------- bme-fit

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BmeFitConfig {
    pub seed: Option<u64>,
    /// Unit-lag marginals JSON.
    pub marginals: Option<PathBuf>,
    /// Alternatively, a complete categorical grid as `x,y,category` CSV.
    pub field: Option<PathBuf>,
    /// Category labels for `field`; defaults to the labels present.
    pub categories: Option<Vec<Category>>,
    pub ipf: IpfOptions,
}

/// Fits the maximum-entropy pattern distribution. Writes the pattern file to
/// `--out`; with a `field` input the derived marginals go to
/// `<stem>.marginals.json`.
pub fn bme_fit(inv: &Invocation) -> Result<Status> {
    let (cfg, base): (BmeFitConfig, _) = inv.load()?;
    ensure_parent(&inv.out)?;
    let marginals = match (&cfg.marginals, &cfg.field) {
        (Some(m), None) => {
            let p = resolve(&base, m);
            read_json::<UnitLagMarginals>(&p).with_context(|| format!("reading marginals {}", p.display()))?
        }
        (None, Some(f)) => {
            let field = load_event(&base, f)?;
            let (w, h) = grid_extent(&field)?;
            if field.len() != w * h {
                bail!("field has {} cells but spans a {w}x{h} grid", field.len());
            }
            let labels = cfg
                .categories
                .clone()
                .unwrap_or_else(|| distinct_labels(field.categories()));
            let cats = CategorySet::new(labels)?;
            let mut cells = vec![0; w * h];
            for (&(x, y), &c) in field.sites().sites().iter().zip(field.categories()) {
                cells[(y as usize - 1) * w + (x as usize - 1)] = c;
            }
            let m = UnitLagMarginals::from_grid(&cats, w, h, &cells)?;
            write_json(&inv.sibling("marginals.json"), &m)?;
            m
        }
        _ => bail!("bme-fit needs exactly one of `marginals` or `field`"),
    };
    let spec = marginals.to_spec()?;
    let k = marginals.categories.len();
    let mut rng = stream(inv.seed(cfg.seed), Purpose::Fitting, 0);
    let (pmf, converged, deviation, sweeps) = match deming_stephan(&spec, &PatternPmf::uniform(k), cfg.ipf, &mut rng) {
        Ok(fit) => (fit.pmf, true, fit.deviation, fit.sweeps),
        Err(CoreError::NotConverged {
            deviation,
            sweeps,
            best,
        }) => (*best, false, deviation, sweeps),
        Err(e) => return Err(e.into()),
    };
    let warning = (!converged).then(|| {
        format!(
            "not converged: marginal deviation {deviation:e} after {sweeps} sweeps exceeds tolerance {:e}; \
             table is the best iterate",
            cfg.ipf.tol
        )
    });
    let file = PatternFile {
        categories: marginals.categories.clone(),
        ordering: PATTERN_ORDERING.to_string(),
        table: pmf.table().to_vec(),
        converged,
        max_marginal_deviation: deviation,
        sweeps,
        warning: warning.clone(),
    };
    write_json(&inv.out, &file)?;
    eprintln!("max marginal deviation {deviation:e} after {sweeps} sweeps");
    if let Some(w) = warning {
        eprintln!("warning: {w}");
        return Ok(Status::NotConverged);
    }
    Ok(Status::Ok)
}

// ----------------------------------------------------------- estimate-map

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorBlock {
    pub mu: f64,
    #[serde(default)]
    pub move_mode: MoveMode,
}

fn default_n() -> usize {
    10_000
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    pub pattern: PathBuf,
    pub covariance_x: CovarianceModel,
    pub covariance_y: CovarianceModel,
    pub prior: PriorBlock,
    #[serde(default)]
    pub schedule: AnnealSchedule,
    /// Monte-Carlo patterns per mismatch evaluation.
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub floor: f64,
    #[serde(default)]
    pub energy_scale: EnergyScale,
    /// Iterations at which to save `<stem>.iter-<n>.json`.
    #[serde(default)]
    pub snapshots: Vec<usize>,
    /// Starting map; drawn from the prior when absent.
    #[serde(default)]
    pub initial_map: Option<PathBuf>,
}

/// Written to `<stem>.summary.json` by `estimate-map`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateSummary {
    pub seed: u64,
    pub schedule: AnnealSchedule,
    pub energy_scale: EnergyScale,
    pub n: usize,
    pub best_f: f64,
    pub last_f: f64,
    pub node_count: usize,
    pub category_proportions: Vec<f64>,
}

/// Anneals a truncation map against a fitted pattern. Writes the
/// lowest-mismatch map to `--out`, the trace to `<stem>.trace.csv` and a
/// summary to `<stem>.summary.json`.
pub fn estimate_map(inv: &Invocation) -> Result<Status> {
    let (cfg, base): (EstimateConfig, _) = inv.load()?;
    ensure_parent(&inv.out)?;
    let seed = inv.seed(cfg.seed);
    let pattern_path = resolve(&base, &cfg.pattern);
    let pattern: PatternFile =
        read_json(&pattern_path).with_context(|| format!("reading pattern {}", pattern_path.display()))?;
    if !pattern.converged {
        eprintln!("warning: pattern file was not fitted to tolerance");
    }
    let categories = CategorySet::new(pattern.categories.clone())?;
    let p_star = pattern.pmf()?;
    cfg.schedule.validate()?;
    let prior = PriorSpec {
        move_mode: cfg.prior.move_mode,
        ..PriorSpec::new(cfg.prior.mu, categories.clone())?
    };
    let mismatch = Mismatch::new(
        &p_star,
        &MismatchConfig {
            n: cfg.n,
            cov_x: cfg.covariance_x,
            cov_y: cfg.covariance_y,
            floor: cfg.floor,
        },
    )?;
    let start = match &cfg.initial_map {
        Some(p) => {
            let m = load_map(&base, p)?;
            if m.categories() != &categories {
                bail!("initial map categories differ from the pattern's");
            }
            m
        }
        None => sample_prior(&prior, &mut stream(seed, Purpose::Prior, 0)),
    };
    let opts = AnnealOptions {
        energy_scale: cfg.energy_scale,
        sample_count: cfg.n,
        snapshots: cfg.snapshots.clone(),
    };
    let mut objective = SeededMismatch {
        mismatch: &mismatch,
        seed,
    };
    let result = anneal(&start, &prior, &cfg.schedule, &opts, &mut objective, seed)?;

    write_map(&inv.out, &result.best)?;
    write_trace(&inv.sibling("trace.csv"), &result.trace)?;
    for (iter, map) in &result.snapshots {
        write_map(&inv.sibling(&format!("iter-{iter}.json")), map)?;
    }
    let summary = EstimateSummary {
        seed,
        schedule: cfg.schedule,
        energy_scale: cfg.energy_scale,
        n: cfg.n,
        best_f: result.best_f,
        last_f: result.last_f,
        node_count: result.best.len(),
        category_proportions: result.best.category_proportions()?,
    };
    write_summary(&inv.sibling("summary.json"), &summary)?;
    eprintln!(
        "best F {:.6} with {} nodes (T0={}, alpha={}, {} iterations)",
        result.best_f, summary.node_count, cfg.schedule.t0, cfg.schedule.alpha, cfg.schedule.iterations
    );
    Ok(Status::Ok)
}

// JSON has no infinity; an unmatched map is reported as null.
fn write_summary(path: &Path, s: &EstimateSummary) -> Result<()> {
    let mut v = serde_json::to_value(s)?;
    for key in ["best_f", "last_f"] {
        let f = if key == "best_f" { s.best_f } else { s.last_f };
        if !f.is_finite() {
            v[key] = serde_json::Value::Null;
        }
    }
    write_json(path, &v)?;
    Ok(())
}

// --------------------------------------------------------- simulate-field

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    pub map: PathBuf,
    pub covariance_x: CovarianceModel,
    pub covariance_y: CovarianceModel,
    pub width: usize,
    pub height: usize,
    /// Also write the latent pair to `<stem>.latent.csv`.
    #[serde(default)]
    pub latent: bool,
}

/// Unconditional categorical field on a 1-based `width x height` grid.
pub fn simulate_field(inv: &Invocation) -> Result<Status> {
    let (cfg, base): (SimulateConfig, _) = inv.load()?;
    ensure_parent(&inv.out)?;
    if cfg.width == 0 || cfg.height == 0 {
        bail!("grid must be at least 1x1");
    }
    let seed = inv.seed(cfg.seed);
    let map = load_map(&base, &cfg.map)?;
    let sites = SiteSet::grid(cfg.width, cfg.height);
    let x = simulate_unconditional(&sites, &cfg.covariance_x, &mut stream(seed, Purpose::Simulation, 0))?;
    let y = simulate_unconditional(&sites, &cfg.covariance_y, &mut stream(seed, Purpose::Simulation, 1))?;
    let cats = map.map_field(&x, &y)?;
    let field = Event::new(sites, cats)?;
    write_event(&inv.out, &field)?;
    if cfg.latent {
        let k = map.categories().len();
        write_latent(&inv.sibling("latent.csv"), &field, &LatentState { x, y, k })?;
    }
    Ok(Status::Ok)
}

// -------------------------------------------------------------- condition

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSize {
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    pub map: PathBuf,
    pub covariance_x: CovarianceModel,
    pub covariance_y: CovarianceModel,
    pub event: PathBuf,
    #[serde(default)]
    pub sampler: ConditionalConfig,
    /// Complete the latent pair on this grid and write `<stem>.field.csv`.
    #[serde(default)]
    pub grid: Option<GridSize>,
}

/// Samples the latent pair at the observed sites given their categories.
/// Writes the final state to `--out` and log-density diagnostics to
/// `<stem>.diagnostics.csv`.
pub fn condition(inv: &Invocation) -> Result<Status> {
    let (cfg, base): (ConditionConfig, _) = inv.load()?;
    ensure_parent(&inv.out)?;
    let seed = inv.seed(cfg.seed);
    let map = load_map(&base, &cfg.map)?;
    let event = load_event(&base, &cfg.event)?;
    let regions = map.triangulate()?;
    let mut sampler = ConditionalSampler::new(&map, &regions, &event, &cfg.covariance_x, &cfg.covariance_y)?;
    let run = sampler.run(&cfg.sampler, &mut stream(seed, Purpose::Conditioning, 0), |_| {})?;
    if run.reverted > 0 {
        eprintln!(
            "note: {} updates were reverted to keep the state feasible",
            run.reverted
        );
    }
    write_latent(&inv.out, &event, &run.state)?;
    write_diagnostics(&inv.sibling("diagnostics.csv"), &run.diagnostics)?;

    if let Some(g) = cfg.grid {
        let all = SiteSet::grid(g.width, g.height);
        let observed = event.sites();
        let missing: Vec<usize> = (0..all.len())
            .filter(|&i| observed.position(all.sites()[i]).is_none())
            .collect();
        let targets = all.subset(&missing);
        let fx = simulate_conditional(
            observed,
            &run.state.x,
            &targets,
            &cfg.covariance_x,
            &mut stream(seed, Purpose::Conditioning, 1),
        )?;
        let fy = simulate_conditional(
            observed,
            &run.state.y,
            &targets,
            &cfg.covariance_y,
            &mut stream(seed, Purpose::Conditioning, 2),
        )?;
        let filled = map.map_field(&fx, &fy)?;
        let mut cats = Vec::with_capacity(all.len());
        let mut next = filled.iter();
        for &s in all.sites() {
            cats.push(match observed.position(s) {
                Some(i) => event.categories()[i],
                None => *next.next().expect("one draw per missing site"),
            });
        }
        write_event(&inv.sibling("field.csv"), &Event::new(all, cats)?)?;
    }
    Ok(Status::Ok)
}

// --------------------------------------------------------------- validate

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    pub map: PathBuf,
    pub covariance_x: CovarianceModel,
    pub covariance_y: CovarianceModel,
    pub event: PathBuf,
    /// Keep only sites in these `x` columns.
    #[serde(default)]
    pub columns: Option<Vec<i64>>,
    #[serde(default)]
    pub score: ScoreConfig,
}

/// Logarithmic score of the map on the event, written as JSON to `--out`.
pub fn validate(inv: &Invocation) -> Result<Status> {
    let (mut cfg, base): (ValidateConfig, _) = inv.load()?;
    ensure_parent(&inv.out)?;
    let seed = inv.seed(cfg.seed);
    if let Some(t) = inv.threads {
        cfg.score.threads = t;
    }
    let map = load_map(&base, &cfg.map)?;
    let mut event = load_event(&base, &cfg.event)?;
    if let Some(cols) = &cfg.columns {
        let keep: Vec<usize> = (0..event.len())
            .filter(|&i| cols.contains(&event.sites().sites()[i].0))
            .collect();
        event = event.subset(&keep);
    }
    if event.is_empty() {
        bail!("no observations left to score");
    }
    let report = unordered_score(&map, &cfg.covariance_x, &cfg.covariance_y, &event, &cfg.score, seed)?;
    write_json(&inv.out, &report)?;
    eprintln!("score {:.4} over {} sites", report.total, report.per_site.len());
    Ok(Status::Ok)
}

// ----------------------------------------------------------------- render

/// Fixed palette, indexed by category position in the category set and
/// cycling after eight entries. Missing cells are black.
pub const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    /// Binary RGB (P6) with [`PALETTE`].
    #[default]
    Ppm,
    /// Binary grayscale (P5); category `i` of `k` gets level `255 (i+1) / k`.
    Pgm,
}

fn default_resolution() -> usize {
    256
}

fn default_extent() -> f64 {
    3.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderConfig {
    /// Categorical grid CSV; one pixel per cell, `y = 1` on the top row.
    #[serde(default)]
    pub field: Option<PathBuf>,
    /// Truncation map, rasterized on `[-extent, extent]^2` with `y` up.
    #[serde(default)]
    pub map: Option<PathBuf>,
    #[serde(default)]
    pub format: ImageFormat,
    /// Palette order for `field`; defaults to the sorted labels present.
    #[serde(default)]
    pub categories: Option<Vec<Category>>,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default = "default_extent")]
    pub extent: f64,
}

/// Raster of category indices; `None` marks a missing cell.
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub k: usize,
    pub cells: Vec<Option<usize>>,
}

impl Raster {
    pub fn write(&self, path: &Path, format: ImageFormat) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        match format {
            ImageFormat::Ppm => {
                write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
                for c in &self.cells {
                    w.write_all(&c.map_or([0, 0, 0], |i| PALETTE[i % PALETTE.len()]))?;
                }
            }
            ImageFormat::Pgm => {
                write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
                let k = self.k.max(1);
                for c in &self.cells {
                    w.write_all(&[c.map_or(0, |i| (255 * (i + 1) / k) as u8)])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub fn rasterize_field(field: &Event, categories: &CategorySet) -> Result<Raster> {
    let (w, h) = grid_extent(field)?;
    let mut cells = vec![None; w * h];
    for (&(x, y), &c) in field.sites().sites().iter().zip(field.categories()) {
        cells[(y as usize - 1) * w + (x as usize - 1)] = Some(categories.require_index(c)?);
    }
    Ok(Raster {
        width: w,
        height: h,
        k: categories.len(),
        cells,
    })
}

pub fn rasterize_map(map: &TruncationMap, resolution: usize, extent: f64) -> Raster {
    let step = 2.0 * extent / resolution as f64;
    let mut cells = Vec::with_capacity(resolution * resolution);
    for row in 0..resolution {
        let y = extent - (row as f64 + 0.5) * step;
        for col in 0..resolution {
            let x = -extent + (col as f64 + 0.5) * step;
            let c = map.map_point(x, y);
            cells.push(map.categories().index_of(c));
        }
    }
    Raster {
        width: resolution,
        height: resolution,
        k: map.categories().len(),
        cells,
    }
}

/// Writes a binary PPM or PGM image of a field or of a map.
pub fn render(inv: &Invocation) -> Result<Status> {
    let (cfg, base): (RenderConfig, _) = inv.load()?;
    ensure_parent(&inv.out)?;
    let raster = match (&cfg.field, &cfg.map) {
        (Some(f), None) => {
            let field = load_event(&base, f)?;
            let labels = cfg
                .categories
                .clone()
                .unwrap_or_else(|| distinct_labels(field.categories()));
            rasterize_field(&field, &CategorySet::new(labels)?)?
        }
        (None, Some(m)) => {
            if cfg.resolution == 0 || !(cfg.extent > 0.0) {
                bail!("resolution and extent must be positive");
            }
            rasterize_map(&load_map(&base, m)?, cfg.resolution, cfg.extent)
        }
        _ => return Err(anyhow!("render needs exactly one of `field` or `map`")),
    };
    raster.write(&inv.out, cfg.format)?;
    Ok(Status::Ok)
}
