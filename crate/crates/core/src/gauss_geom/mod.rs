//! Standard-Gaussian geometry: interval unions, truncated sampling, triangle
//! masses and constrained pair sampling.

pub mod interval;
pub mod normal;
pub mod polygon;
pub mod triangle;
pub mod union;

pub use interval::{Interval, IntervalUnion};
pub use normal::{
    log_std_normal_sf, sample_truncated_normal, std_normal_cdf, std_normal_pdf, std_normal_quantile, std_normal_sf,
};
pub use polygon::ConvexPolygon;
pub use triangle::{orient, owens_t, triangle_mass, triangle_mass_quadrature, Point2, Triangle};
pub use union::{sample_pair_in_union, TriangleUnion};
