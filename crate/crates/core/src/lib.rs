//! Gridded geo-economic statistical learning.
//!
//! The crate turns per-cell climate time series and geography attributes into a
//! predictor matrix, builds a log10 per-capita gross cell product target, fits
//! tree-ensemble and linear regressors, ranks predictors with a three-stage
//! importance/forward-selection procedure and produces per-cell diagnostic
//! fields. [`synthworld`] generates worlds with a known response for testing
//! the whole chain.

pub mod error;
pub mod eval;
pub mod features;
pub mod geof;
pub mod gridstore;
pub mod learners;
pub mod rng;
pub mod select;
pub mod synthworld;
pub mod target;

pub use error::{Error, Result};
