//! Local Bayesian regression.
//!
//! The regression curve is modelled locally, around each evaluation point,
//! as a low-order parametric form (a level, a line, a low-order polynomial or
//! a multiplicative correction to a start curve). The local data enter
//! through a kernel-smoothed likelihood, local priors are centred on a
//! parametric start curve, and the local posterior mean is the estimate.
//! With flat local priors the estimators reduce to the Nadaraya-Watson and
//! local-linear smoothers.
//!
//! On top of the conjugate local posteriors the crate provides
//! empirical-Bayes estimates of the prior precision (local, pooled and
//! Stein-type shrinkage), Gamma-prior inference for the residual scale with
//! t credible bands, Poisson count regression, a multivariate extension and
//! Monte-Carlo averaging over start curves drawn from their approximate
//! posterior.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]
// `!(x > 0.0)` deliberately rejects NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Test oracles are written with explicit indices.
#![cfg_attr(test, allow(clippy::needless_range_loop))]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod bandwidth;
pub mod bayes_level;
pub mod bayes_linear;
pub mod cells;
pub mod data;
mod error;
pub mod hierarchical;
pub mod kernel;
pub mod linalg;
pub mod local_fit;
pub mod mult_correction;
pub mod multivariate;
pub mod poisson;
pub mod special;
pub mod start_curves;
#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use kernel::Kernel;
pub use data::{CellPartition, Dataset, EvaluationGrid};
pub use local_fit::{LocalDesign, LocalFitResult};
