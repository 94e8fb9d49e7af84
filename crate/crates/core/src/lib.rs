//! Goodness-of-fit tests for sample-only generative models.
//!
//! Conditional score functions are fitted from generator draws, combined into a
//! kernel Stein discrepancy, and calibrated by Monte Carlo simulation. Exact-score
//! KSD, MMD and MMDAgg baselines share the same reporting surface.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiment;
pub mod generators;
pub mod kernels;
pub mod matrix;
pub mod probe;
pub mod rng;
pub mod score;
pub mod stein;
pub mod testing;

pub use error::{Error, Result};
pub use matrix::SampleMatrix;
