//! Synthetic ground truth and a slow reference minimizer for verification.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::admm::{objective, AdmmProblem};
use crate::dataset::Dataset;
use crate::numerics::general_eigenvalues;
use crate::{Error, Result};

/// Share of nonzeros placed between blocks when `n_blocks` is set.
pub const CROSS_BLOCK_SHARE: f64 = 0.05;
pub const ORACLE_MAX_N: usize = 30;
const MAX_HALVINGS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n: usize,
    pub p: usize,
    /// Fraction of off-diagonal entries that are nonzero.
    pub density: f64,
    /// Spectral radius of the generated `W`.
    pub spectral_scale: f64,
    pub noise_sigma: f64,
    pub n_blocks: Option<usize>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n: 50,
            p: 3,
            density: 0.05,
            spectral_scale: 0.5,
            noise_sigma: 0.01,
            n_blocks: None,
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.p == 0 {
            return Err(Error::InvalidConfig(format!("need n >= 2 and p >= 1, got n = {}, p = {}", self.n, self.p)));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::InvalidConfig(format!("density must be in (0, 1], got {}", self.density)));
        }
        if !(self.spectral_scale > 0.0 && self.spectral_scale < 1.0) {
            return Err(Error::InvalidConfig(format!("spectral_scale must be in (0, 1), got {}", self.spectral_scale)));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::InvalidConfig(format!("noise_sigma must be nonnegative, got {}", self.noise_sigma)));
        }
        if let Some(b) = self.n_blocks {
            if b == 0 || b > self.n {
                return Err(Error::InvalidConfig(format!("n_blocks must be in 1..={}, got {b}", self.n)));
            }
        }
        Ok(())
    }

    /// Block of each location when `n_blocks` is set: contiguous, near-equal
    /// ranges.
    pub fn block_of(&self, i: usize) -> usize {
        let b = self.n_blocks.unwrap_or(1);
        i * b / self.n
    }
}

/// Largest eigenvalue modulus, from the full nonsymmetric spectrum.
pub fn spectral_radius(w: &DMatrix<f64>) -> Result<f64> {
    Ok(general_eigenvalues(w)?.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Sparse nonnegative `W` with zero diagonal, rescaled to the requested
/// spectral radius.
pub fn generate_w(spec: &SynthSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let n = spec.n;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let off_diag = n * (n - 1);
    let target = ((spec.density * off_diag as f64).round() as usize).clamp(1, off_diag);

    let (within, cross): (Vec<_>, Vec<_>) = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .partition(|&(i, j)| spec.n_blocks.is_none() || spec.block_of(i) == spec.block_of(j));

    let mut chosen = Vec::with_capacity(target);
    if spec.n_blocks.is_some() {
        let n_cross = ((CROSS_BLOCK_SHARE * target as f64).floor() as usize).min(cross.len());
        let n_within = (target - n_cross).min(within.len());
        chosen.extend(sample(&mut rng, within.len(), n_within).into_iter().map(|k| within[k]));
        chosen.extend(sample(&mut rng, cross.len(), n_cross).into_iter().map(|k| cross[k]));
    } else {
        chosen.extend(sample(&mut rng, within.len(), target).into_iter().map(|k| within[k]));
    }

    let mut w = DMatrix::zeros(n, n);
    for (i, j) in chosen {
        w[(i, j)] = rng.random_range(0.5..1.5);
    }
    let radius = spectral_radius(&w)?;
    if radius > 1e-12 {
        w *= spec.spectral_scale / radius;
    } else {
        // nilpotent support: bound the radius through the row sums instead
        let max_row = w.row_iter().map(|r| r.sum()).fold(0.0, f64::max);
        log::warn!("generated W is nilpotent; scaling its largest row sum to {}", spec.spectral_scale);
        w *= spec.spectral_scale / max_row;
    }
    Ok(w)
}

/// Draws `X ~ N(0, 1)`, `ε ~ N(0, σ²)` and solves `(I − W) y = Xβ + ε`.
pub fn generate_dataset(w_true: &DMatrix<f64>, beta_true: &DVector<f64>, spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let n = w_true.nrows();
    if !w_true.is_square() || n != spec.n || beta_true.len() != spec.p {
        return Err(Error::DimensionMismatch(format!(
            "W {:?}, beta {}, spec n = {}, p = {}",
            w_true.shape(),
            beta_true.len(),
            spec.n,
            spec.p
        )));
    }
    let radius = spectral_radius(w_true)?;
    if radius >= 1.0 - crate::spillover::RADIUS_MARGIN {
        return Err(Error::SpectralRadius { estimate: radius, method: "eigenvalues" });
    }
    // separate stream from generate_w so both can share one seed
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(0x9E37_79B9));
    let x = DMatrix::from_fn(n, spec.p, |_, _| StandardNormal.sample(&mut rng));
    let rhs = if spec.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
        &x * beta_true + DVector::from_fn(n, |_, _| noise.sample(&mut rng))
    } else {
        &x * beta_true
    };
    let system = DMatrix::identity(n, n) - w_true;
    let y = system.lu().solve(&rhs).ok_or_else(|| Error::Singular("I - W".into()))?;
    Dataset::from_arrays(y, x)
}

/// Deterministic coefficient vector `1, −0.5, 0.25, …` used by the harnesses.
pub fn default_beta(p: usize) -> DVector<f64> {
    DVector::from_fn(p, |j, _| (-0.5f64).powi(j as i32))
}

/// Rows grouped into consecutive clusters of the given sizes, each with its
/// own coefficients: column 0 of `X` is an intercept, the rest are
/// standard normal. Returns the dataset, the cluster of each row and the
/// per-cluster coefficients.
pub fn clustered_regression(sizes: &[usize], p: usize, noise_sigma: f64, seed: u64) -> Result<(Dataset, Vec<usize>, Vec<DVector<f64>>)> {
    if sizes.is_empty() || p == 0 || !(noise_sigma >= 0.0) {
        return Err(Error::InvalidConfig("need at least one cluster, p >= 1 and noise_sigma >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let betas: Vec<DVector<f64>> = (0..sizes.len())
        .map(|c| DVector::from_fn(p, |j, _| if j == 0 { 2.0 * c as f64 } else { rng.random_range(-2.0..2.0) }))
        .collect();
    let labels: Vec<usize> = sizes.iter().enumerate().flat_map(|(c, &s)| std::iter::repeat_n(c, s)).collect();
    let n = labels.len();
    let x = DMatrix::from_fn(n, p, |_, j| if j == 0 { 1.0 } else { StandardNormal.sample(&mut rng) });
    let noise = Normal::new(0.0, noise_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let y = DVector::from_fn(n, |i, _| (x.row(i) * &betas[labels[i]])[0] + noise.sample(&mut rng));
    Ok((Dataset::from_arrays(y, x)?, labels, betas))
}

#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub w: DMatrix<f64>,
    pub beta: DVector<f64>,
    pub objective: f64,
    pub steps: usize,
    pub halvings: usize,
}

/// Reference minimizer of `½‖y − Wy − Xβ‖² + λ‖W‖₁` over `W ≥ 0`,
/// `diag(W) = 0`.
///
/// Proximal gradient on `W` with `β` refreshed exactly after every step (so
/// the smooth part is the profile `min_β`, whose gradient in `W` is
/// `−e yᵀ`). The step starts at `1/‖y‖²` unless given, and is halved
/// whenever a step would raise the objective, which keeps the objective
/// sequence non-increasing.
pub fn oracle_solve(y: &DVector<f64>, x: &DMatrix<f64>, lambda1: f64, steps: usize, step_size: Option<f64>) -> Result<OracleSolution> {
    let n = y.len();
    if n > ORACLE_MAX_N {
        return Err(Error::InvalidConfig(format!("reference solver is limited to n <= {ORACLE_MAX_N}, got {n}")));
    }
    if !(lambda1 >= 0.0) {
        return Err(Error::InvalidConfig(format!("lambda1 must be nonnegative, got {lambda1}")));
    }
    let problem = AdmmProblem::new(y, x)?;
    let yty = y.norm_squared();
    let mut t = step_size.unwrap_or(if yty > 0.0 { 1.0 / yty } else { 1.0 });
    let eval = |w: &DMatrix<f64>| -> Result<(DVector<f64>, DVector<f64>, f64)> {
        let target = y - w * y;
        let beta = problem.solve_beta(&target);
        let e = &target - x * &beta;
        let obj = objective(w, &beta, y, x, lambda1)?;
        Ok((beta, e, obj))
    };
    let mut w = DMatrix::zeros(n, n);
    let (mut beta, mut e, mut obj) = eval(&w)?;
    let mut halvings = 0;
    let mut taken = 0;
    while taken < steps {
        let mut cand = w.clone();
        cand.ger(t, &e, y, 1.0);
        cand.apply(|v| *v = (*v - t * lambda1).max(0.0));
        cand.fill_diagonal(0.0);
        let (cb, ce, cobj) = eval(&cand)?;
        if cobj > obj {
            if cobj - obj <= 1e-12 * (1.0 + obj.abs()) {
                // rounding-level increase: no further progress is possible
                break;
            }
            halvings += 1;
            if halvings > MAX_HALVINGS {
                return Err(Error::OracleDiverged(MAX_HALVINGS));
            }
            t *= 0.5;
            continue;
        }
        taken += 1;
        let moved = (&cand - &w).amax();
        w = cand;
        beta = cb;
        e = ce;
        obj = cobj;
        if moved <= 1e-15 {
            break;
        }
    }
    Ok(OracleSolution {
        w,
        beta,
        objective: obj,
        steps: taken,
        halvings,
    })
}

/// F1 of the off-diagonal support `{|W_est| > threshold}` against
/// `{W_true > 0}`. Two empty supports score 1.
pub fn support_f1(w_est: &DMatrix<f64>, w_true: &DMatrix<f64>, threshold: f64) -> Result<f64> {
    if w_est.shape() != w_true.shape() {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", w_est.shape(), w_true.shape())));
    }
    let (mut tp, mut est, mut truth) = (0usize, 0usize, 0usize);
    for i in 0..w_est.nrows() {
        for j in 0..w_est.ncols() {
            if i == j {
                continue;
            }
            let a = w_est[(i, j)].abs() > threshold;
            let b = w_true[(i, j)] > 0.0;
            est += a as usize;
            truth += b as usize;
            tp += (a && b) as usize;
        }
    }
    if est + truth == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * tp as f64 / (est + truth) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::admm::{fit_admm, AdmmConfig};
    use crate::numerics::power_iteration_radius;

    #[test]
    fn full_density_fills_off_diagonal() {
        let spec = SynthSpec { n: 3, density: 1.0, ..Default::default() };
        let w = generate_w(&spec).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(w[(i, j)] > 0.0, i != j);
            }
        }
    }

    #[test]
    fn rescaled_to_requested_radius() {
        let spec = SynthSpec { n: 20, density: 0.3, spectral_scale: 0.5, ..Default::default() };
        let w = generate_w(&spec).unwrap();
        assert!((spectral_radius(&w).unwrap() - 0.5).abs() <= 1e-9);
        let (est, converged) = power_iteration_radius(&w, 10_000, 1e-14);
        assert!(converged);
        assert!((est - 0.5).abs() <= 1e-6);
        assert!(w.iter().all(|v| *v >= 0.0));
        assert!((0..20).all(|i| w[(i, i)] == 0.0));
    }

    #[test]
    fn blocks_hold_most_nonzeros() {
        let spec = SynthSpec { n: 30, density: 0.2, n_blocks: Some(3), ..Default::default() };
        let w = generate_w(&spec).unwrap();
        let (mut inside, mut total) = (0, 0);
        for i in 0..30 {
            for j in 0..30 {
                if w[(i, j)] > 0.0 {
                    total += 1;
                    inside += (spec.block_of(i) == spec.block_of(j)) as usize;
                }
            }
        }
        assert!(inside as f64 >= 0.95 * total as f64, "{inside}/{total}");
        assert!(inside < total, "expected some cross-block links");
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let spec = SynthSpec { n: 25, ..Default::default() };
        let w = generate_w(&spec).unwrap();
        assert_eq!(w, generate_w(&spec).unwrap());
        let beta = default_beta(spec.p);
        let a = generate_dataset(&w, &beta, &spec).unwrap();
        let b = generate_dataset(&w, &beta, &spec).unwrap();
        assert_eq!(a.y(), b.y());
        assert_eq!(a.x(), b.x());
        let other = generate_w(&SynthSpec { seed: 7, ..spec }).unwrap();
        assert_ne!(w, other);
    }

    #[test]
    fn noiseless_zero_w_gives_linear_response() {
        let spec = SynthSpec { n: 10, p: 2, noise_sigma: 0.0, ..Default::default() };
        let beta = DVector::from_vec(vec![2.0, -1.0]);
        let d = generate_dataset(&DMatrix::zeros(10, 10), &beta, &spec).unwrap();
        let expected = d.x() * &beta;
        assert!((d.y() - expected).amax() <= 1e-14);
    }

    #[test]
    fn generated_y_satisfies_the_model() {
        let spec = SynthSpec { n: 15, p: 2, noise_sigma: 0.0, density: 0.2, ..Default::default() };
        let w = generate_w(&spec).unwrap();
        let beta = default_beta(2);
        let d = generate_dataset(&w, &beta, &spec).unwrap();
        let resid = d.y() - &w * d.y() - d.x() * &beta;
        assert!(resid.amax() <= 1e-12);
    }

    #[test]
    fn unstable_w_is_rejected() {
        let spec = SynthSpec { n: 2, p: 1, ..Default::default() };
        let w = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(matches!(
            generate_dataset(&w, &default_beta(1), &spec),
            Err(Error::SpectralRadius { .. })
        ));
    }

    #[test]
    fn admm_dominates_truth_on_noiseless_data() {
        let spec = SynthSpec { n: 12, p: 2, noise_sigma: 0.0, density: 0.2, ..Default::default() };
        let w = generate_w(&spec).unwrap();
        let beta = default_beta(2);
        let d = generate_dataset(&w, &beta, &spec).unwrap();
        let lambda = 0.01;
        let truth = objective(&w, &beta, d.y(), d.x(), lambda).unwrap();
        let fit = fit_admm(d.y(), d.x(), &AdmmConfig { lambda1: lambda, ..Default::default() }).unwrap();
        assert!(fit.objective <= truth * (1.0 + 1e-6));
    }

    #[test]
    fn oracle_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = DMatrix::from_fn(5, 2, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(5, |_, _| rng.random_range(-1.0..2.0));
        let ols = crate::ols::fit_ols(&x, &y).unwrap();

        let huge = oracle_solve(&y, &x, 1e6, 1000, None).unwrap();
        assert_eq!(huge.w, DMatrix::zeros(5, 5));
        assert!((huge.beta.clone() - ols.beta_vector()).amax() < 1e-12);

        let free = oracle_solve(&y, &x, 0.0, 5000, None).unwrap();
        assert!(free.objective <= 0.5 * ols.ssr());

        let big = DMatrix::zeros(31, 1);
        assert!(oracle_solve(&DVector::zeros(31), &big, 0.1, 10, None).is_err());
    }

    #[test]
    fn oracle_recovers_from_oversized_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DMatrix::from_fn(6, 2, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(6, |_, _| rng.random_range(-1.0..2.0));
        let sol = oracle_solve(&y, &x, 0.1, 2000, Some(100.0)).unwrap();
        assert!(sol.halvings > 0);
        let reference = oracle_solve(&y, &x, 0.1, 2000, None).unwrap();
        assert!(sol.objective <= reference.objective * 1.01 + 1e-9);
    }

    #[test]
    fn oracle_agrees_with_admm_on_small_instance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = DMatrix::from_fn(6, 2, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(6, |_, _| rng.random_range(-1.0..2.0));
        let lambda = 0.3;
        let oracle = oracle_solve(&y, &x, lambda, 50_000, None).unwrap();
        let fit = fit_admm(&y, &x, &AdmmConfig { lambda1: lambda, eps_abs: 1e-9, eps_rel: 1e-9, max_iter: 100_000, ..Default::default() }).unwrap();
        let rel = (fit.objective - oracle.objective).abs() / oracle.objective.abs().max(1e-12);
        assert!(rel <= 1e-4, "admm {} oracle {}", fit.objective, oracle.objective);
    }

    #[test]
    fn support_f1_cases() {
        let truth = DMatrix::from_row_slice(3, 3, &[0., 1., 1., 1., 0., 1., 0., 0., 0.]);
        assert_eq!(support_f1(&truth, &truth, 1e-6).unwrap(), 1.0);
        assert_eq!(support_f1(&DMatrix::zeros(3, 3), &truth, 1e-6).unwrap(), 0.0);
        let half = DMatrix::from_row_slice(3, 3, &[0., 1., 1., 0., 0., 0., 0., 0., 0.]);
        assert!((support_f1(&half, &truth, 1e-6).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        // diagonal entries never count
        let diag = DMatrix::identity(3, 3);
        assert_eq!(support_f1(&diag, &DMatrix::zeros(3, 3), 1e-6).unwrap(), 1.0);
        assert!(support_f1(&truth, &DMatrix::zeros(2, 2), 1e-6).is_err());
    }
}
