//! Dense numeric kernels shared by the estimators.
//!
//! Everything here is a pure function of its inputs. The linear algebra is
//! backed by `nalgebra`, except the nonsymmetric spectrum, which comes from
//! `faer`. The rank-one inverse and the shrinkage operator are
//! written out because the ADMM loop calls them every iteration.

use nalgebra::{Cholesky, Complex, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::{Error, Result};

/// Asymmetry (max abs of `S - Sᵀ`) tolerated before [`sym_eig`] symmetrizes.
pub const SYMMETRY_TOL: f64 = 1e-8;

/// Ridge added to a singular Gram matrix, as a fraction of its mean diagonal.
pub const RIDGE_SCALE: f64 = 1e-8;

/// Relative pivot size below which a Cholesky factor is treated as singular.
const PIVOT_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `S⁻¹ · M`
    Left,
    /// `M · S⁻¹`
    Right,
}

/// Implicit inverse of `S = y yᵀ + ρ I`.
///
/// By Sherman–Morrison, `S⁻¹ = (I − y yᵀ / (ρ + yᵀy)) / ρ`, so applying it to
/// an `n × n` matrix costs `O(n²)` and nothing `n × n` is ever formed.
#[derive(Debug, Clone)]
pub struct Rank1Inverse {
    rho: f64,
    y: DVector<f64>,
    yty: f64,
}

impl Rank1Inverse {
    pub fn new(y: &DVector<f64>, rho: f64) -> Result<Self> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::InvalidConfig(format!("rho must be positive, got {rho}")));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("rank-one vector"));
        }
        Ok(Self {
            rho,
            yty: y.dot(y),
            y: y.clone(),
        })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn yty(&self) -> f64 {
        self.yty
    }

    pub fn dim(&self) -> usize {
        self.y.len()
    }

    /// Applies `S⁻¹` to a single vector in place. `S` is symmetric, so this
    /// serves rows and columns alike.
    pub fn apply_in_place(&self, v: &mut [f64]) {
        let y = self.y.as_slice();
        let dot: f64 = v.iter().zip(y).map(|(a, b)| a * b).sum();
        let coef = dot / (self.rho + self.yty);
        for (vi, yi) in v.iter_mut().zip(y) {
            *vi = (*vi - coef * yi) / self.rho;
        }
    }

    /// Dense `S`, for checks only.
    pub fn forward_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        &self.y * self.y.transpose() + DMatrix::identity(n, n) * self.rho
    }
}

/// Returns `M · S⁻¹` (`Side::Right`) or `S⁻¹ · M` (`Side::Left`).
pub fn apply_rank1_inverse(inv: &Rank1Inverse, m: &DMatrix<f64>, side: Side) -> Result<DMatrix<f64>> {
    let n = inv.dim();
    let denom = inv.rho + inv.yty;
    match side {
        Side::Right => {
            if m.ncols() != n {
                return Err(Error::DimensionMismatch(format!(
                    "M has {} columns, S is {n}x{n}",
                    m.ncols()
                )));
            }
            // M S⁻¹ = (M − (M y) yᵀ / (ρ + yᵀy)) / ρ
            let my = m * &inv.y;
            let mut out = m.clone();
            out.ger(-1.0 / denom, &my, &inv.y, 1.0);
            out /= inv.rho;
            Ok(out)
        }
        Side::Left => {
            if m.nrows() != n {
                return Err(Error::DimensionMismatch(format!(
                    "M has {} rows, S is {n}x{n}",
                    m.nrows()
                )));
            }
            let ytm = m.tr_mul(&inv.y);
            let mut out = m.clone();
            out.ger(-1.0 / denom, &inv.y, &ytm, 1.0);
            out /= inv.rho;
            Ok(out)
        }
    }
}

/// `sign(x) · max(|x| − f, 0)`, the proximal operator of `f·|·|`.
#[inline]
pub fn soft_threshold(x: f64, f: f64) -> f64 {
    debug_assert!(f >= 0.0);
    if x > f {
        x - f
    } else if x < -f {
        x + f
    } else {
        0.0
    }
}

pub fn soft_threshold_matrix(m: &DMatrix<f64>, f: f64) -> DMatrix<f64> {
    m.map(|x| soft_threshold(x, f))
}

/// Eigendecomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEig {
    /// Sorted descending.
    pub values: DVector<f64>,
    /// Column `i` is the unit eigenvector for `values[i]`.
    pub vectors: DMatrix<f64>,
}

pub fn sym_eig(s: &DMatrix<f64>) -> Result<SymEig> {
    if !s.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "sym_eig needs a square matrix, got {}x{}",
            s.nrows(),
            s.ncols()
        )));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix passed to sym_eig"));
    }
    let asym = s
        .iter()
        .zip(s.transpose().iter())
        .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()));
    let sym = if asym > SYMMETRY_TOL {
        log::debug!("sym_eig: symmetrizing input (asymmetry {asym:.3e})");
        (s + s.transpose()) * 0.5
    } else {
        s.clone()
    };
    let n = sym.nrows();
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(SymEig { values, vectors })
}

/// Eigenvalues of a general real square matrix (real Schur form).
pub fn general_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch("eigenvalues of a non-square matrix".into()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix passed to general_eigenvalues"));
    }
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    // nalgebra's real Schur iteration can stall on some nonsymmetric inputs,
    // so the general spectrum comes from faer.
    let a = faer::Mat::<f64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    let values = a
        .eigenvalues()
        .map_err(|e| Error::Singular(format!("eigenvalue iteration failed: {e:?}")))?;
    Ok(values.into_iter().map(|z| Complex::new(z.re, z.im)).collect())
}

/// Power-iteration estimate of the spectral radius.
///
/// Returns `(estimate, converged)`. The estimate is the growth rate of
/// `‖W^k x‖` over the last step. For matrices without a dominant eigenvalue
/// it may oscillate; the caller decides what to do when `converged` is false.
pub fn power_iteration_radius(m: &DMatrix<f64>, max_iter: usize, tol: f64) -> (f64, bool) {
    let n = m.nrows();
    if n == 0 {
        return (0.0, true);
    }
    // Deterministic, strictly positive start so nonnegative matrices see their
    // Perron vector.
    let mut x = DVector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.618_033_988_749).fract());
    x /= x.norm();
    let mut prev = f64::NAN;
    for _ in 0..max_iter {
        let next = m * &x;
        let norm = next.norm();
        if norm == 0.0 {
            return (0.0, true);
        }
        // Two-step growth damps the oscillation of period-2 spectra.
        let next2 = m * &next;
        let norm2 = next2.norm();
        if norm2 == 0.0 {
            return (0.0, true);
        }
        let est = norm2.sqrt();
        x = next2 / norm2;
        if x.iter().any(|v| !v.is_finite()) {
            return (f64::INFINITY, false);
        }
        if (est - prev).abs() <= tol * est.max(1.0) {
            return (est, true);
        }
        prev = est;
    }
    (prev, false)
}

/// Cached Cholesky factor of a symmetric positive-definite matrix, with an
/// optional ridge shift applied at construction.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    chol: Cholesky<f64, Dyn>,
    ridge: f64,
}

impl CholeskyFactor {
    /// Factorizes `g`, failing if it is not (numerically) positive definite.
    pub fn new(g: &DMatrix<f64>) -> Result<Self> {
        Self::factor(g, 0.0)
    }

    /// Factorizes `g`; on failure retries with `g + τ I`,
    /// `τ = RIDGE_SCALE · trace(g) / p`, and logs a warning.
    pub fn with_ridge_fallback(g: &DMatrix<f64>) -> Result<Self> {
        match Self::factor(g, 0.0) {
            Ok(f) => Ok(f),
            Err(Error::NotPositiveDefinite) => {
                let p = g.nrows().max(1) as f64;
                let tau = RIDGE_SCALE * g.trace() / p;
                let tau = if tau > 0.0 { tau } else { RIDGE_SCALE };
                log::warn!("Gram matrix is singular or ill-conditioned; adding ridge {tau:.3e}");
                Self::factor(g, tau)
            }
            Err(e) => Err(e),
        }
    }

    fn factor(g: &DMatrix<f64>, ridge: f64) -> Result<Self> {
        if !g.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "Cholesky needs a square matrix, got {}x{}",
                g.nrows(),
                g.ncols()
            )));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Gram matrix"));
        }
        let mut shifted = g.clone();
        for i in 0..g.nrows() {
            shifted[(i, i)] += ridge;
        }
        let max_diag = shifted.diagonal().iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
        let chol = Cholesky::new(shifted).ok_or(Error::NotPositiveDefinite)?;
        let l = chol.l_dirty();
        let min_pivot = (0..g.nrows()).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
        if g.nrows() > 0 && min_pivot <= PIVOT_TOL * max_diag {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(Self { chol, ridge })
    }

    /// Ridge that was added (0 if the matrix factorized as given).
    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }
}

/// `G⁻¹ B` for symmetric positive-definite `G`.
pub fn cholesky_solve(g: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if g.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "G is {}x{}, B has {} rows",
            g.nrows(),
            g.ncols(),
            b.nrows()
        )));
    }
    Ok(CholeskyFactor::new(g)?.solve(b))
}

#[cfg(test)]
pub(crate) fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |a, &b| a.max(b.abs()))
}
