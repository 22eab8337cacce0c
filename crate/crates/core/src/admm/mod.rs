//! Joint estimation of a sparse nonnegative contiguity matrix `W` and
//! coefficients `β` for `y = Wy + Xβ + ε`:
//!
//! ```text
//! min ½‖y − Wy − Xβ‖² + λ‖W‖₁   subject to  diag(W) = 0,  W ≥ 0
//! ```
//!
//! solved by ADMM with the splitting `A = W` and `diag(A) = 0`. Each sweep
//! costs `O(n²)` because the only `n × n` linear system, `W (y yᵀ + ρI)`,
//! has a rank-one-plus-identity matrix.

mod io;
mod updates;

pub use io::{read_w_triplets, write_w_triplets, FitSummary, TRIPLET_THRESHOLD};
pub use updates::{literal, solve_w_unconstrained, update_a, update_beta, update_dual, update_w, w_update_rhs};

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::numerics::CholeskyFactor;
use crate::ols::r_squared;
use crate::{Error, Result};

/// How the nonnegativity of `W` enters the W-subproblem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WUpdate {
    /// Row-wise exact minimizer over `W ≥ 0`.
    #[default]
    Exact,
    /// Unconstrained minimizer clamped at zero.
    Projected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmmConfig {
    pub lambda1: f64,
    pub rho1: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    /// Reserved; the solver is deterministic.
    pub seed: u64,
    pub w_update: WUpdate,
    /// Residual balancing of `ρ` every [`ADAPT_INTERVAL`] iterations.
    pub adaptive_rho: bool,
    /// Use the update formulas exactly as printed in the source derivation.
    pub paper_literal: bool,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            rho1: 1.0,
            eps_abs: 1e-6,
            eps_rel: 1e-4,
            max_iter: 10_000,
            seed: 42,
            w_update: WUpdate::Exact,
            adaptive_rho: false,
            paper_literal: false,
        }
    }
}

pub const ADAPT_INTERVAL: usize = 10;
const ADAPT_MU: f64 = 10.0;
const ADAPT_TAU: f64 = 2.0;

impl AdmmConfig {
    pub fn with_lambda(&self, lambda1: f64) -> Self {
        Self { lambda1, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0) || !self.lambda1.is_finite() {
            return Err(Error::InvalidConfig(format!("lambda1 must be a nonnegative number, got {}", self.lambda1)));
        }
        if !(self.rho1 > 0.0) || !self.rho1.is_finite() {
            return Err(Error::InvalidConfig(format!("rho1 must be positive, got {}", self.rho1)));
        }
        if !(self.eps_abs > 0.0) || !(self.eps_rel > 0.0) {
            return Err(Error::InvalidConfig("tolerances must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Read-only data shared by every iteration: `y`, `X` and the factor of `XᵀX`.
#[derive(Debug, Clone)]
pub struct AdmmProblem {
    y: DVector<f64>,
    x: DMatrix<f64>,
    yty: f64,
    gram: CholeskyFactor,
}

impl AdmmProblem {
    pub fn new(y: &DVector<f64>, x: &DMatrix<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch(format!("X has {} rows, y has {}", x.nrows(), y.len())));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ADMM input"));
        }
        Ok(Self {
            yty: y.dot(y),
            gram: CholeskyFactor::with_ridge_fallback(&x.tr_mul(x))?,
            y: y.clone(),
            x: x.clone(),
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn yty(&self) -> f64 {
        self.yty
    }

    /// `y − Xβ`.
    pub fn residual_vector(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.y - &self.x * beta
    }

    /// Least-squares coefficients of `target` on `X`.
    pub fn solve_beta(&self, target: &DVector<f64>) -> DVector<f64> {
        self.gram.solve_vec(&self.x.tr_mul(target))
    }
}

#[derive(Debug, Clone)]
pub struct AdmmState {
    pub w: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub beta: DVector<f64>,
    /// Unscaled dual for the constraint `A = W`.
    pub delta1: DMatrix<f64>,
    pub iter: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

impl AdmmState {
    pub fn zeros(n: usize, p: usize) -> Self {
        Self {
            w: DMatrix::zeros(n, n),
            a: DMatrix::zeros(n, n),
            beta: DVector::zeros(p),
            delta1: DMatrix::zeros(n, n),
            iter: 0,
            primal_residual: f64::INFINITY,
            dual_residual: f64::INFINITY,
        }
    }

    /// `W = A = Δ = 0` and `β` at the OLS estimate.
    pub fn initial(problem: &AdmmProblem) -> Self {
        let mut s = Self::zeros(problem.n(), problem.p());
        s.beta = problem.solve_beta(problem.y());
        s
    }
}

#[derive(Debug, Clone)]
pub struct SarFit {
    pub w: DMatrix<f64>,
    pub beta: Vec<f64>,
    /// `Wy + Xβ`.
    pub fitted: Vec<f64>,
    pub r_squared: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `(primal, dual)` residual after each iteration.
    pub residual_history: Vec<(f64, f64)>,
    /// `(ε_pri, ε_dual)` at the final iteration.
    pub tolerances: (f64, f64),
    pub lambda1: f64,
    /// Penalty in force at the final iteration.
    pub rho1: f64,
    pub elapsed_secs: f64,
}

impl SarFit {
    pub fn nnz(&self, threshold: f64) -> usize {
        self.w.iter().filter(|v| **v > threshold).count()
    }

    pub fn residuals(&self, y: &DVector<f64>) -> Vec<f64> {
        y.iter().zip(&self.fitted).map(|(a, b)| a - b).collect()
    }

    pub fn summary(&self) -> FitSummary {
        FitSummary::from_fit(self)
    }
}

/// `½‖y − Wy − Xβ‖² + λ Σ|wᵢⱼ|`. `W` must be nonnegative with a zero diagonal.
pub fn objective(w: &DMatrix<f64>, beta: &DVector<f64>, y: &DVector<f64>, x: &DMatrix<f64>, lambda1: f64) -> Result<f64> {
    let n = y.len();
    if w.shape() != (n, n) || x.nrows() != n || x.ncols() != beta.len() {
        return Err(Error::DimensionMismatch(format!(
            "W {:?}, X {:?}, beta {}, y {}",
            w.shape(),
            x.shape(),
            beta.len(),
            n
        )));
    }
    if (0..n).any(|i| w[(i, i)] != 0.0) || w.iter().any(|v| *v < 0.0) {
        return Err(Error::InvalidConfig("objective needs W >= 0 with a zero diagonal".into()));
    }
    let e = y - w * y - x * beta;
    Ok(0.5 * e.norm_squared() + lambda1 * w.iter().map(|v| v.abs()).sum::<f64>())
}

/// Smallest `λ` at which `W = 0` (with `β` at OLS) is optimal:
/// `max_{i≠j} |rᵢ yⱼ|` with `r` the OLS residuals.
pub fn lambda_max(y: &DVector<f64>, x: &DMatrix<f64>) -> Result<f64> {
    let problem = AdmmProblem::new(y, x)?;
    let beta = problem.solve_beta(y);
    let r = problem.residual_vector(&beta);
    let n = y.len();
    if n < 2 {
        return Ok(0.0);
    }
    // largest and second largest |y_j| cover every "j ≠ i"
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| y[b].abs().total_cmp(&y[a].abs()));
    let (top, second) = (order[0], order[1]);
    Ok((0..n)
        .map(|i| r[i].abs() * if i == top { y[second].abs() } else { y[top].abs() })
        .fold(0.0, f64::max))
}

/// One full sweep `W → A → β → Δ` at penalty `rho`.
pub fn step(state: &mut AdmmState, problem: &AdmmProblem, config: &AdmmConfig, rho: f64) {
    let lambda = config.lambda1;
    if config.paper_literal {
        state.w = literal::update_w(state, problem, rho);
        let a = literal::update_a(&state.w, &state.delta1, lambda, rho);
        state.beta = update_beta(&state.w, problem);
        state.delta1 = literal::update_dual(&state.delta1, &a, &state.w, rho);
        finish_step(state, a, rho);
    } else {
        state.w = update_w(state, problem, rho, config.w_update);
        let a = update_a(&state.w, &state.delta1, lambda, rho);
        state.beta = update_beta(&state.w, problem);
        state.delta1 = update_dual(&state.delta1, &a, &state.w, rho);
        finish_step(state, a, rho);
    }
}

fn finish_step(state: &mut AdmmState, a_new: DMatrix<f64>, rho: f64) {
    state.primal_residual = (&a_new - &state.w).norm();
    state.dual_residual = rho * (&a_new - &state.a).norm();
    state.a = a_new;
    state.iter += 1;
}

fn tolerances(state: &AdmmState, config: &AdmmConfig) -> (f64, f64) {
    let n = state.w.nrows() as f64;
    let eps_pri = n * config.eps_abs + config.eps_rel * state.w.norm().max(state.a.norm());
    let eps_dual = n * config.eps_abs + config.eps_rel * state.delta1.norm();
    (eps_pri, eps_dual)
}

/// Runs ADMM from the standard start (`W = A = Δ = 0`, `β` = OLS).
pub fn fit_admm(y: &DVector<f64>, x: &DMatrix<f64>, config: &AdmmConfig) -> Result<SarFit> {
    config.validate()?;
    let problem = AdmmProblem::new(y, x)?;
    let state = AdmmState::initial(&problem);
    fit_from_state(&problem, state, config)
}

/// Runs ADMM from an arbitrary state, e.g. a previous fit at a nearby `λ`.
pub fn fit_from_state(problem: &AdmmProblem, mut state: AdmmState, config: &AdmmConfig) -> Result<SarFit> {
    config.validate()?;
    let n = problem.n();
    if state.w.shape() != (n, n) || state.a.shape() != (n, n) || state.delta1.shape() != (n, n) || state.beta.len() != problem.p() {
        return Err(Error::DimensionMismatch("ADMM state does not match the problem".into()));
    }
    let start = Instant::now();
    let mut rho = config.rho1;
    let mut history = Vec::new();
    let mut converged = false;
    let mut eps = (f64::INFINITY, f64::INFINITY);
    for k in 1..=config.max_iter {
        step(&mut state, problem, config, rho);
        history.push((state.primal_residual, state.dual_residual));
        if !state.primal_residual.is_finite() || !state.dual_residual.is_finite() {
            log::warn!("ADMM diverged at iteration {k} (lambda1 = {})", config.lambda1);
            break;
        }
        let (eps_pri, eps_dual) = tolerances(&state, config);
        eps = (eps_pri, eps_dual);
        if state.primal_residual <= eps_pri && state.dual_residual <= eps_dual {
            converged = true;
            break;
        }
        if config.adaptive_rho && k % ADAPT_INTERVAL == 0 {
            if state.primal_residual > ADAPT_MU * state.dual_residual {
                rho *= ADAPT_TAU;
            } else if state.dual_residual > ADAPT_MU * state.primal_residual {
                rho /= ADAPT_TAU;
            }
        }
    }
    if !converged {
        log::warn!(
            "ADMM stopped after {} iterations without meeting tolerances (lambda1 = {}, primal {:.3e}, dual {:.3e})",
            state.iter,
            config.lambda1,
            state.primal_residual,
            state.dual_residual
        );
    }
    Ok(read_out(problem, &state, config, (converged, eps), history, rho, start.elapsed().as_secs_f64()))
}

fn read_out(
    problem: &AdmmProblem,
    state: &AdmmState,
    config: &AdmmConfig,
    (converged, tolerances): (bool, (f64, f64)),
    residual_history: Vec<(f64, f64)>,
    rho: f64,
    elapsed_secs: f64,
) -> SarFit {
    let mut w = state.a.map(|v| if v.is_finite() { v.max(0.0) } else { 0.0 });
    w.fill_diagonal(0.0);
    let beta = update_beta(&w, problem);
    let y = problem.y();
    let fitted = &w * y + problem.x() * &beta;
    let obj = objective(&w, &beta, y, problem.x(), config.lambda1).expect("read-out is feasible");
    SarFit {
        r_squared: r_squared(y.as_slice(), fitted.as_slice()),
        objective: obj,
        beta: beta.as_slice().to_vec(),
        fitted: fitted.as_slice().to_vec(),
        w,
        iterations: state.iter,
        converged,
        residual_history,
        tolerances,
        lambda1: config.lambda1,
        rho1: rho,
        elapsed_secs,
    }
}

/// Independent fits over a `λ` grid, in input order.
///
/// With `warm_start` the fits run sequentially, each starting from the
/// previous fit's state; otherwise they run in parallel from the standard
/// start.
pub fn lambda_sweep(y: &DVector<f64>, x: &DMatrix<f64>, lambdas: &[f64], config: &AdmmConfig, warm_start: bool) -> Result<Vec<SarFit>> {
    if lambdas.is_empty() {
        return Err(Error::InvalidConfig("lambda grid is empty".into()));
    }
    for &l in lambdas {
        config.with_lambda(l).validate()?;
    }
    let problem = AdmmProblem::new(y, x)?;
    if !warm_start {
        return lambdas
            .par_iter()
            .map(|&l| fit_from_state(&problem, AdmmState::initial(&problem), &config.with_lambda(l)))
            .collect();
    }
    let mut fits = Vec::with_capacity(lambdas.len());
    let mut state = AdmmState::initial(&problem);
    for &l in lambdas {
        let fit = fit_from_state(&problem, state.clone(), &config.with_lambda(l))?;
        state.a = fit.w.clone();
        state.w = fit.w.clone();
        state.beta = DVector::from_column_slice(&fit.beta);
        state.iter = 0;
        fits.push(fit);
    }
    Ok(fits)
}

/// Evenly spaced grid `0, step, …, max` (inclusive up to rounding).
pub fn lambda_grid(max: f64, step: f64) -> Vec<f64> {
    if !(step > 0.0) || !(max >= 0.0) {
        return vec![0.0];
    }
    let count = (max / step + 1e-9).floor() as usize;
    (0..=count).map(|k| k as f64 * step).collect()
}
