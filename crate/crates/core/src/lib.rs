//! Deep two-sample testing.
//!
//! A feature map `φ` (a bias-free ReLU network with a final `tanh`) is trained
//! on an auxiliary transfer sample to separate two populations. The test
//! samples are then pushed through `φ` once and compared by
//!
//! * the DMMD statistic `S = nm/(n+m) ‖mean φ(X) − mean φ(Y)‖²`, calibrated by
//!   label permutations or by its weighted-χ² limit, and
//! * the DFDA statistic `T = nm/(n+m) Dᵀ Σ̂⁻¹ D` on PCA-reduced features,
//!   calibrated by its χ² limit.
//!
//! Baselines (Gaussian-kernel MMD with the median heuristic, kernel MMD on
//! learned features, and a classifier two-sample test) and a simulation
//! harness for type-1/type-2 error rates are included.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod error;

pub mod baselines;
pub mod data;
pub mod experiment;
pub mod featmap;
pub mod linalg;
pub mod nulldist;
pub mod teststats;

pub use error::{Error, Result};
pub use linalg::Matrix;
