//! Classical SAR baseline: a fixed, a priori `W` and a scalar spatial lag
//! `ρ` estimated by concentrated maximum likelihood.

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use nalgebra::{Complex, DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::numerics::{general_eigenvalues, CholeskyFactor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum WeightSource {
    Knn { k: usize },
    Adjacency,
}

/// Row-normalized, zero-diagonal, nonnegative weights.
#[derive(Debug, Clone)]
pub struct FixedW {
    pub w: DMatrix<f64>,
    pub source: WeightSource,
}

fn row_normalize(w: &mut DMatrix<f64>) {
    for i in 0..w.nrows() {
        let s: f64 = w.row(i).sum();
        if s > 0.0 {
            w.row_mut(i).apply(|v| *v /= s);
        }
    }
}

/// Row `i` gets `1/k` at each of its `k` nearest neighbours (Euclidean; ties
/// go to the lower index).
pub fn build_knn_weights(coords: &DMatrix<f64>, k: usize) -> Result<FixedW> {
    let n = coords.nrows();
    if coords.ncols() != 2 {
        return Err(Error::DimensionMismatch(format!("coords must have 2 columns, got {}", coords.ncols())));
    }
    if k == 0 || k >= n {
        return Err(Error::InvalidConfig(format!("k-NN needs 1 <= k < n, got k = {k}, n = {n}")));
    }
    if coords.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("coordinates"));
    }
    let mut w = DMatrix::zeros(n, n);
    let weight = 1.0 / k as f64;
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        cand.clear();
        for j in (0..n).filter(|&j| j != i) {
            let dx = coords[(i, 0)] - coords[(j, 0)];
            let dy = coords[(i, 1)] - coords[(j, 1)];
            cand.push((dx * dx + dy * dy, j));
        }
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in &cand[..k] {
            w[(i, j)] = weight;
        }
    }
    Ok(FixedW {
        w,
        source: WeightSource::Knn { k },
    })
}

/// Symmetric 0/1 adjacency from id pairs, then row-normalized. Rows with no
/// neighbours stay zero.
pub fn build_adjacency_weights(ids: &[String], edges: &[(String, String)]) -> Result<FixedW> {
    let n = ids.len();
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut w = DMatrix::zeros(n, n);
    for (a, b) in edges {
        let i = *index.get(a.as_str()).ok_or_else(|| Error::UnknownId(a.clone()))?;
        let j = *index.get(b.as_str()).ok_or_else(|| Error::UnknownId(b.clone()))?;
        if i == j {
            return Err(Error::SelfLoop(a.clone()));
        }
        w[(i, j)] = 1.0;
        w[(j, i)] = 1.0;
    }
    if edges.is_empty() {
        log::warn!("empty edge list: adjacency weights are all zero");
    }
    row_normalize(&mut w);
    Ok(FixedW {
        w,
        source: WeightSource::Adjacency,
    })
}

/// Reads a two-column CSV (with header) of neighbouring location ids.
pub fn read_edge_list(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file);
    let mut edges = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        if rec.len() < 2 {
            return Err(Error::InvalidConfig("edge list rows need two id columns".into()));
        }
        edges.push((rec[0].to_string(), rec[1].to_string()));
    }
    Ok(edges)
}

/// Error term of the profile objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SarObjective {
    /// `−(2/n) ln|I − ρW| + SSE(ρ)/n`
    #[default]
    Quoted,
    /// `−(2/n) ln|I − ρW| + ln(SSE(ρ)/n)`, the concentrated log-likelihood
    /// up to sign and constants. Invariant to the scale of `y`.
    Concentrated,
}

#[derive(Debug, Clone, Serialize)]
pub struct SarMlFit {
    pub rho: f64,
    pub beta: Vec<f64>,
    pub objective: f64,
    pub fitted: Vec<f64>,
    pub r_squared: f64,
    /// Grid probes as `(ρ, objective)`.
    pub log_likelihood_profile: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy)]
pub struct SarMlOptions {
    pub grid_step: f64,
    pub rho_bound: f64,
    pub golden_tol: f64,
    pub objective: SarObjective,
}

impl Default for SarMlOptions {
    fn default() -> Self {
        Self {
            grid_step: 0.01,
            rho_bound: 0.99,
            golden_tol: 1e-6,
            objective: SarObjective::Quoted,
        }
    }
}

/// Pieces of the profile objective that do not depend on `ρ`.
struct Profile<'a> {
    eigenvalues: &'a [Complex<f64>],
    /// Residual of `y` on `X`.
    e0: DVector<f64>,
    /// Residual of `Wy` on `X`.
    el: DVector<f64>,
    kind: SarObjective,
}

impl Profile<'_> {
    fn log_det(&self, rho: f64) -> f64 {
        log_det_from_eigenvalues(self.eigenvalues, rho)
    }

    fn eval(&self, rho: f64) -> f64 {
        let ld = self.log_det(rho);
        if !ld.is_finite() {
            return f64::INFINITY;
        }
        let n = self.e0.len() as f64;
        let sse = (&self.e0 - &self.el * rho).norm_squared();
        let err = match self.kind {
            SarObjective::Quoted => sse / n,
            SarObjective::Concentrated => (sse / n).max(f64::MIN_POSITIVE).ln(),
        };
        -2.0 / n * ld + err
    }
}

/// `ln|I − ρW| = Σ ln|1 − ρλᵢ|`, or `−∞` when a real factor is nonpositive.
pub fn log_det_from_eigenvalues(eigenvalues: &[Complex<f64>], rho: f64) -> f64 {
    let mut acc = 0.0;
    for l in eigenvalues {
        let f = Complex::new(1.0 - rho * l.re, -rho * l.im);
        if l.im.abs() <= 1e-12 && f.re <= 0.0 {
            return f64::NEG_INFINITY;
        }
        acc += f.norm().ln();
    }
    acc
}

/// Estimates `ρ` and `β` for `y = ρWy + Xβ + ε` with `W` fixed.
///
/// Eigenvalues of `W` are computed once; the objective is scanned on a grid
/// over `(−bound, bound)` and refined by golden-section search around the
/// best probe. `β` is least squares of `y − ρWy` on `X` at the optimum.
pub fn fit_sar_ml(y: &DVector<f64>, x: &DMatrix<f64>, w: &FixedW, options: &SarMlOptions) -> Result<SarMlFit> {
    let n = y.len();
    if x.nrows() != n || w.w.nrows() != n || w.w.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "y has {n} rows, X is {}x{}, W is {}x{}",
            x.nrows(),
            x.ncols(),
            w.w.nrows(),
            w.w.ncols()
        )));
    }
    if !(options.grid_step > 0.0) || !(0.0 < options.rho_bound && options.rho_bound < 1.0) {
        return Err(Error::InvalidConfig("grid step must be positive and rho bound in (0, 1)".into()));
    }
    let eigenvalues = general_eigenvalues(&w.w)?;
    let factor = CholeskyFactor::with_ridge_fallback(&x.tr_mul(x))?;
    let residual = |v: &DVector<f64>| v - x * factor.solve_vec(&x.tr_mul(v));
    let wy = &w.w * y;
    let profile = Profile {
        eigenvalues: &eigenvalues,
        e0: residual(y),
        el: residual(&wy),
        kind: options.objective,
    };

    let steps = (2.0 * options.rho_bound / options.grid_step).round() as usize;
    let grid: Vec<f64> = (0..=steps)
        .map(|k| -options.rho_bound + k as f64 * options.grid_step)
        .map(|r| r.clamp(-options.rho_bound, options.rho_bound))
        .collect();
    let values: Vec<f64> = grid.par_iter().map(|&r| profile.eval(r)).collect();
    let log_likelihood_profile: Vec<(f64, f64)> = grid.iter().copied().zip(values.iter().copied()).collect();

    // Ties resolve toward ρ = 0 so a flat profile (W = 0) returns 0.
    let best = (0..grid.len())
        .min_by(|&a, &b| values[a].total_cmp(&values[b]).then(grid[a].abs().total_cmp(&grid[b].abs())))
        .expect("grid is nonempty");
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(grid.len() - 1)];
    let (golden_rho, golden_val) = golden_section(|r| profile.eval(r), lo, hi, options.golden_tol);
    let (rho, objective) = if golden_val < values[best] {
        (golden_rho, golden_val)
    } else {
        (grid[best], values[best])
    };

    let target = y - &wy * rho;
    let beta = factor.solve_vec(&x.tr_mul(&target));
    let fitted = &wy * rho + x * &beta;
    Ok(SarMlFit {
        rho,
        r_squared: crate::ols::r_squared(y.as_slice(), fitted.as_slice()),
        beta: beta.as_slice().to_vec(),
        objective,
        fitted: fitted.as_slice().to_vec(),
        log_likelihood_profile,
    })
}

/// Profile objective at `ρ` computed from scratch (eigenvalues included).
pub fn sar_objective(y: &DVector<f64>, x: &DMatrix<f64>, w: &DMatrix<f64>, rho: f64, kind: SarObjective) -> Result<f64> {
    let eigenvalues = general_eigenvalues(w)?;
    let factor = CholeskyFactor::with_ridge_fallback(&x.tr_mul(x))?;
    let residual = |v: &DVector<f64>| v - x * factor.solve_vec(&x.tr_mul(v));
    let profile = Profile {
        eigenvalues: &eigenvalues,
        e0: residual(y),
        el: residual(&(w * y)),
        kind,
    };
    Ok(profile.eval(rho))
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let m = 0.5 * (a + b);
    (m, f(m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ols::fit_ols;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn ids(n: usize) -> Vec<String> {
        (1..=n).map(|i| i.to_string()).collect()
    }

    fn pairs(list: &[(&str, &str)]) -> Vec<(String, String)> {
        list.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn knn_collinear_points() {
        let coords = DMatrix::from_row_slice(3, 2, &[0., 0., 1., 0., 3., 0.]);
        let w = build_knn_weights(&coords, 1).unwrap().w;
        let expected = DMatrix::from_row_slice(3, 3, &[0., 1., 0., 1., 0., 0., 0., 1., 0.]);
        assert_eq!(w, expected);
    }

    #[test]
    fn knn_all_neighbours() {
        let coords = DMatrix::from_row_slice(4, 2, &[0., 0., 1., 0., 3., 1., -2., 5.]);
        let w = build_knn_weights(&coords, 3).unwrap().w;
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 0.0 } else { 1.0 / 3.0 };
                assert_eq!(w[(i, j)], want);
            }
        }
    }

    #[test]
    fn knn_ties_go_to_lower_index() {
        // points 1 and 2 equidistant from 0
        let coords = DMatrix::from_row_slice(3, 2, &[0., 0., 1., 0., -1., 0.]);
        let w = build_knn_weights(&coords, 1).unwrap().w;
        assert_eq!(w[(0, 1)], 1.0);
        assert_eq!(w[(0, 2)], 0.0);
    }

    #[test]
    fn knn_matches_brute_force_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 80;
        let coords = DMatrix::from_fn(n, 2, |_, _| rng.random_range(0.0..10.0));
        let w = build_knn_weights(&coords, 5).unwrap().w;
        for i in 0..n {
            let mut d: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| ((coords.row(i) - coords.row(j)).norm(), j))
                .collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let nbrs: Vec<usize> = d[..5].iter().map(|t| t.1).collect();
            let row_nnz: Vec<usize> = (0..n).filter(|&j| w[(i, j)] != 0.0).collect();
            assert_eq!(row_nnz.len(), 5);
            for j in nbrs {
                assert_eq!(w[(i, j)], 0.2);
            }
            assert!((w.row(i).sum() - 1.0).abs() <= 1e-12);
            assert_eq!(w[(i, i)], 0.0);
        }
    }

    #[test]
    fn knn_rejects_bad_k() {
        let coords = DMatrix::zeros(3, 2);
        assert!(build_knn_weights(&coords, 0).is_err());
        assert!(build_knn_weights(&coords, 3).is_err());
    }

    #[test]
    fn adjacency_path_and_complete_graph() {
        let w = build_adjacency_weights(&ids(3), &pairs(&[("1", "2"), ("2", "3")])).unwrap().w;
        assert_eq!(w.row(1).iter().copied().collect::<Vec<_>>(), vec![0.5, 0.0, 0.5]);
        let k4 = pairs(&[("1", "2"), ("1", "3"), ("1", "4"), ("2", "3"), ("2", "4"), ("3", "4")]);
        let w = build_adjacency_weights(&ids(4), &k4).unwrap().w;
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 0.0 } else { 1.0 / 3.0 };
                assert!((w[(i, j)] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn adjacency_edge_cases() {
        let w = build_adjacency_weights(&ids(3), &[]).unwrap().w;
        assert_eq!(w, DMatrix::zeros(3, 3));
        assert!(matches!(
            build_adjacency_weights(&ids(3), &pairs(&[("1", "9")])),
            Err(Error::UnknownId(id)) if id == "9"
        ));
        assert!(matches!(
            build_adjacency_weights(&ids(3), &pairs(&[("2", "2")])),
            Err(Error::SelfLoop(_))
        ));
    }

    #[test]
    fn edge_list_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("edges.csv");
        std::fs::write(&path, "from,to\na,b\nb,c\n").unwrap();
        assert_eq!(read_edge_list(&path).unwrap(), pairs(&[("a", "b"), ("b", "c")]));
    }

    #[test]
    fn zero_w_reduces_to_ols() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = DMatrix::from_fn(30, 2, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(30, |_, _| rng.random_range(-1.0..1.0));
        let w = FixedW {
            w: DMatrix::zeros(30, 30),
            source: WeightSource::Adjacency,
        };
        let fit = fit_sar_ml(&y, &x, &w, &SarMlOptions::default()).unwrap();
        let ols = fit_ols(&x, &y).unwrap();
        assert!(fit.rho.abs() < 0.01);
        for (a, b) in fit.beta.iter().zip(&ols.beta) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    fn generative_instance(seed: u64, rho: f64, sigma: f64) -> (DVector<f64>, DMatrix<f64>, FixedW) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 120;
        let coords = DMatrix::from_fn(n, 2, |_, _| rng.random_range(0.0..10.0));
        let w = build_knn_weights(&coords, 4).unwrap();
        let x = DMatrix::from_fn(n, 2, |_, j| if j == 0 { 1.0 } else { rng.random_range(-2.0..2.0) });
        let beta = DVector::from_vec(vec![3.0, 2.0]);
        let noise = Normal::new(0.0, sigma.max(1e-300)).unwrap();
        let e = DVector::from_fn(n, |_, _| if sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 });
        let a = DMatrix::identity(n, n) - &w.w * rho;
        let y = a.lu().solve(&(&x * beta + e)).unwrap();
        (y, x, w)
    }

    #[test]
    fn recovers_generative_rho() {
        let (y, x, w) = generative_instance(11, 0.5, 1e-6);
        for kind in [SarObjective::Quoted, SarObjective::Concentrated] {
            let opts = SarMlOptions {
                objective: kind,
                ..Default::default()
            };
            let fit = fit_sar_ml(&y, &x, &w, &opts).unwrap();
            assert!((fit.rho - 0.5).abs() <= 0.05, "{kind:?}: rho = {}", fit.rho);
        }
    }

    #[test]
    fn returned_rho_beats_every_grid_probe() {
        let (y, x, w) = generative_instance(12, 0.3, 0.5);
        let fit = fit_sar_ml(&y, &x, &w, &SarMlOptions::default()).unwrap();
        assert!(fit.rho.abs() < 1.0);
        for &(_, v) in &fit.log_likelihood_profile {
            assert!(fit.objective <= v);
        }
    }

    #[test]
    fn cached_eigenvalues_match_fresh_log_determinant() {
        let (y, x, w) = generative_instance(13, 0.4, 0.1);
        let fit = fit_sar_ml(&y, &x, &w, &SarMlOptions::default()).unwrap();
        let n = y.len() as f64;
        for &(rho, cached) in fit.log_likelihood_profile.iter().step_by(17) {
            let fresh = sar_objective(&y, &x, &w.w, rho, SarObjective::Quoted).unwrap();
            assert!((fresh - cached).abs() <= 1e-10);
            // and the log-determinant itself against an LU determinant
            let a = DMatrix::identity(y.len(), y.len()) - &w.w * rho;
            let ld = a.lu().determinant().abs().ln();
            let eig = general_eigenvalues(&w.w).unwrap();
            assert!((log_det_from_eigenvalues(&eig, rho) - ld).abs() <= 1e-8 * n);
        }
    }

    #[test]
    fn nonpositive_factor_gives_infinite_objective() {
        let eig = vec![Complex::new(2.0, 0.0)];
        assert_eq!(log_det_from_eigenvalues(&eig, 0.6), f64::NEG_INFINITY);
    }
}
