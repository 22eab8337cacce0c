//! Joint inference of a sparse, nonnegative spatial contiguity matrix `W` and
//! regression coefficients `β` for the model `y = Wy + Xβ + ε`, plus the
//! downstream analyses that consume the learnt `W`: spectral submarket
//! clustering, per-submarket regression and spillover prediction.
//!
//! The solver lives in [`admm`]. Baselines are in [`ols`] and [`sar_fixed`];
//! [`synth`] generates ground-truth instances and hosts an independent
//! reference minimizer used to check the solver.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod admm;
pub mod bench;
pub mod boston;
pub mod clustering;
pub mod dataset;
mod error;
pub mod numerics;
pub mod ols;
pub mod sar_fixed;
pub mod spillover;
pub mod submarkets;
pub mod synth;

pub use error::{Error, Result};

pub use nalgebra::{DMatrix, DVector};
