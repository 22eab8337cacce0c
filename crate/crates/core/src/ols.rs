//! Ordinary least squares baseline.
//!
//! No intercept is added; include a column of ones in `X` if you want one.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::numerics::CholeskyFactor;
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct OlsFit {
    pub beta: Vec<f64>,
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
    pub r_squared: f64,
    /// Ridge added to `XᵀX` when it was singular; 0 otherwise.
    pub ridge: f64,
}

impl OlsFit {
    pub fn beta_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.beta)
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        if x.ncols() != self.beta.len() {
            return Err(Error::DimensionMismatch(format!(
                "X has {} columns, beta has {}",
                x.ncols(),
                self.beta.len()
            )));
        }
        Ok(x * self.beta_vector())
    }

    pub fn ssr(&self) -> f64 {
        self.residuals.iter().map(|r| r * r).sum()
    }
}

/// Least squares fit of `y` on `X` via the normal equations, with a ridge
/// fallback when `XᵀX` is not positive definite.
pub fn fit_ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<OlsFit> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!("X has {n} rows, y has {}", y.len())));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("OLS input"));
    }
    if n <= p {
        log::warn!("OLS with n = {n} <= p = {p}; the fit is not identified without the ridge fallback");
    }
    let factor = CholeskyFactor::with_ridge_fallback(&x.tr_mul(x))?;
    let beta = factor.solve_vec(&x.tr_mul(y));
    let fitted = x * &beta;
    let residuals = y - &fitted;
    Ok(OlsFit {
        r_squared: r_squared(y.as_slice(), fitted.as_slice()),
        beta: beta.as_slice().to_vec(),
        fitted: fitted.as_slice().to_vec(),
        residuals: residuals.as_slice().to_vec(),
        ridge: factor.ridge(),
    })
}

/// `1 − Σ(y − ŷ)² / Σ(y − ȳ)²`, defined as 0 when `y` is constant.
pub fn r_squared(y: &[f64], fitted: &[f64]) -> f64 {
    assert_eq!(y.len(), fitted.len(), "r_squared: length mismatch");
    if y.is_empty() {
        return 0.0;
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if sst == 0.0 {
        return 0.0;
    }
    let ssr: f64 = y.iter().zip(fitted).map(|(a, b)| (a - b).powi(2)).sum();
    1.0 - ssr / sst
}

pub fn rmse(actual: &[f64], predicted: &[f64]) -> f64 {
    assert_eq!(actual.len(), predicted.len(), "rmse: length mismatch");
    if actual.is_empty() {
        return 0.0;
    }
    let sse: f64 = actual.iter().zip(predicted).map(|(a, b)| (a - b).powi(2)).sum();
    (sse / actual.len() as f64).sqrt()
}
