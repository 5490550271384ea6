//! Spectral capacity of attention.
//!
//! * [`spectral`]: Jacobi SVD, matrix norms, effective rank and Rényi-2 rank.
//! * [`attention`]: a small transformer with manual backprop, attention traces
//!   and the max-effective-rank capacity of a model over a dataset.
//! * [`bounds`]: closed-form generalization bounds and numerical checks of the
//!   effective-rank → trace-norm inequality chain.
//! * [`rademacher`]: empirical Rademacher complexity of trace-norm-limited
//!   attention classes.
//! * [`experiments`]: synthetic tasks, training, gap measurement, power-law fits
//!   and sample-size sweeps.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod attention;
pub mod bounds;
pub mod error;
pub mod experiments;
pub mod matrix;
pub mod par;
pub mod rademacher;
pub mod rng;
pub mod spectral;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use par::Execution;
