//! Truncated bigaussian categorical fields driven by colored Voronoi
//! truncation maps.
//!
//! The crate covers the whole modelling loop:
//!
//! | Module | Purpose |
//! |--------|---------|
//! | [`gauss_geom`] | standard-normal kernels: truncated sampling, Gaussian mass of triangles |
//! | [`tessellation`] | colored Voronoi maps, nearest-node mapping, per-category triangulation |
//! | [`grf`] | covariance models, unconditional simulation, simple kriging |
//! | [`bme`] | maximum-entropy five-point pattern distribution by iterative proportional fitting |
//! | [`estimator`] | prior, birth/death/move proposals, Monte-Carlo mismatch, annealing |
//! | [`sampler`] | Gibbs conditioning of the latent pair to categorical observations |
//! | [`scoring`] | logarithmic scores of predictive distributions on unordered data |
//!
//! File formats shared with the command-line front end live in [`formats`].

pub mod bme;
pub mod error;
pub mod estimator;
pub mod formats;
pub mod gauss_geom;
pub mod grf;
pub mod rng;
pub mod sampler;
pub mod scoring;
pub mod tessellation;

pub use bme::{PatternPmf, PatternSpec, UnitLagMarginals};
pub use error::{Error, Result};
pub use estimator::{AnnealSchedule, MismatchConfig, PriorSpec};
pub use gauss_geom::{IntervalUnion, Point2, Triangle, TriangleUnion};
pub use grf::{CovarianceModel, LatentField, SiteSet};
pub use sampler::{Event, LatentState};
pub use scoring::{PredictiveEstimate, ScoreReport};
pub use tessellation::{Category, CategoryRegions, CategorySet, TruncationMap};

/// Half-width of the latent-space box on which truncation maps are
/// triangulated. Standard Gaussian mass outside `[-8, 8]^2` is below 1e-14.
pub const LATENT_BOX: f64 = 8.0;
