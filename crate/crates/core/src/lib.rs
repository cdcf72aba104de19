//! Numerical toolkit for restricted orthogonal projections of fractal sets.
//!
//! The modules build on each other bottom-up:
//!
//! - [`grassmann`]: frames, the metric `d_π`, invariant sampling, vertical lifts, Plücker embedding.
//! - [`measures`]: weighted point clouds, dyadic densities, mollification, Riesz energies.
//! - [`dimension`]: box-counting and energy-based dimension estimators.
//! - [`marstrand`]: (δ,k)-sets, tubes, incidence energy and the exceptional-direction census.
//! - [`fractals`]: deterministic IFS generators and the named corpus.
//! - [`experiments`]: configs, reports, file formats and the experiment drivers behind the CLI.

pub mod cli;
pub mod dimension;
pub mod error;
pub mod experiments;
pub mod fractals;
pub mod grassmann;
pub mod io;
pub mod marstrand;
pub mod measures;
pub mod seeding;

pub use error::{Error, Result};
pub use grassmann::{PluckerPoint, Subspace};
pub use measures::{DyadicGrid, GridMeasure, PointCloud};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
