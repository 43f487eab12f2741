//! Testing-driven variable selection (TDVS) for Bayesian modal regression with
//! MixHat errors.
//!
//! The numeric core is generic over [`scalar::Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`.

// `!(x > 0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cis;
pub mod distribution;
pub mod em;
pub mod error;
pub mod io;
mod line_search;
pub mod model;
pub mod scalar;
pub mod seed;
pub mod selection;
pub mod simulation;
pub mod tuning;

pub use error::{Error, Result};

pub type Dataset64 = model::Dataset<f64>;
pub type RegressionParams64 = model::RegressionParams<f64>;
pub type Hyperparams64 = model::Hyperparams<f64>;
pub type MixHat64 = distribution::MixHatParams<f64>;
pub type EmConfig64 = em::EmConfig<f64>;
pub type FitResult64 = em::FitResult<f64>;
pub type SelectionConfig64 = selection::SelectionConfig<f64>;
pub type SelectionResult64 = selection::SelectionResult<f64>;
