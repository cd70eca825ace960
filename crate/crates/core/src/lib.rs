//! Grouped variational spike-and-slab regression.
//!
//! Coordinate-ascent variational inference for sparse group selection with
//! unknown noise variance, Gaussian and scale-mixture slabs, empirical-Bayes
//! hyperparameter tuning, and a B-spline front end for sparse additive models.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod additive;
pub mod cavi;
pub mod cli;
pub mod error;
pub mod preprocess;
pub mod simbench;
pub mod slab;
pub mod types;

pub use cavi::{fit, CaviEngine};
pub use error::{GvssbError, Result};
pub use preprocess::{standardize, StandardizationInfo};
pub use types::*;
