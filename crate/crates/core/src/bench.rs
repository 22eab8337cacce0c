//! Timing harness for the ADMM solver on synthetic instances.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::admm::{fit_admm, step, AdmmConfig, AdmmProblem, AdmmState};
use crate::dataset::Dataset;
use crate::synth::{default_beta, generate_dataset, generate_w, SynthSpec};
use crate::Result;

/// Expected nonzeros per row of the synthetic `W`.
pub const NEIGHBOURS_PER_ROW: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Sizes for the per-iteration scaling fit.
    pub sizes: Vec<usize>,
    pub p: usize,
    /// Iterations timed per size.
    pub iterations: usize,
    /// Timing repeats per size; the fastest is kept.
    pub repeats: usize,
    pub seed: u64,
    pub admm: AdmmConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![100, 200, 400, 800],
            p: 12,
            iterations: 20,
            repeats: 3,
            seed: 42,
            admm: AdmmConfig { lambda1: 4.0, adaptive_rho: true, ..AdmmConfig::default() },
        }
    }
}

/// Synthetic dataset of size `n` with about [`NEIGHBOURS_PER_ROW`] links
/// per row and spectral radius 0.5.
pub fn synthetic_instance(n: usize, p: usize, seed: u64) -> Result<(Dataset, DMatrix<f64>)> {
    let spec = SynthSpec {
        n,
        p,
        density: (NEIGHBOURS_PER_ROW / (n.max(2) - 1) as f64).min(1.0),
        spectral_scale: 0.5,
        noise_sigma: 0.1,
        n_blocks: None,
        seed,
    };
    let w = generate_w(&spec)?;
    let d = generate_dataset(&w, &default_beta(p), &spec)?;
    Ok((d, w))
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingPoint {
    pub n: usize,
    pub secs_per_iter: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingReport {
    pub points: Vec<ScalingPoint>,
    /// Least-squares slope of `ln(time)` against `ln(n)`.
    pub slope: f64,
}

/// Mean wall time of one ADMM sweep at size `n`, fastest of `repeats`.
pub fn time_per_iteration(y: &DVector<f64>, x: &DMatrix<f64>, config: &AdmmConfig, iterations: usize, repeats: usize) -> Result<f64> {
    config.validate()?;
    let problem = AdmmProblem::new(y, x)?;
    let mut best = f64::INFINITY;
    for _ in 0..repeats.max(1) {
        let mut state = AdmmState::initial(&problem);
        let start = Instant::now();
        for _ in 0..iterations.max(1) {
            step(&mut state, &problem, config, config.rho1);
        }
        best = best.min(start.elapsed().as_secs_f64() / iterations.max(1) as f64);
    }
    Ok(best)
}

/// Least-squares slope of `ln t` on `ln n`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let logs: Vec<(f64, f64)> = points.iter().map(|&(n, t)| (n.ln(), t.ln())).collect();
    let m = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / m;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

pub fn run_scaling(config: &BenchConfig) -> Result<ScalingReport> {
    let mut points = Vec::with_capacity(config.sizes.len());
    for &n in &config.sizes {
        let (d, _) = synthetic_instance(n, config.p, config.seed)?;
        let secs = time_per_iteration(d.y(), d.x(), &config.admm, config.iterations, config.repeats)?;
        log::info!("n = {n}: {secs:.3e} s per iteration");
        points.push(ScalingPoint { n, secs_per_iter: secs });
    }
    let slope = loglog_slope(&points.iter().map(|p| (p.n as f64, p.secs_per_iter)).collect::<Vec<_>>());
    Ok(ScalingReport { points, slope })
}

#[derive(Debug, Clone, Serialize)]
pub struct FullFitReport {
    pub n: usize,
    pub p: usize,
    pub lambda1: f64,
    pub wall_secs: f64,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    pub r_squared: f64,
    pub nnz: usize,
}

/// One complete fit on a synthetic instance of size `n`.
pub fn run_full_fit(n: usize, config: &BenchConfig) -> Result<FullFitReport> {
    let (d, _) = synthetic_instance(n, config.p, config.seed)?;
    let start = Instant::now();
    let fit = fit_admm(d.y(), d.x(), &config.admm)?;
    Ok(FullFitReport {
        n,
        p: config.p,
        lambda1: config.admm.lambda1,
        wall_secs: start.elapsed().as_secs_f64(),
        iterations: fit.iterations,
        converged: fit.converged,
        objective: fit.objective,
        r_squared: fit.r_squared,
        nnz: fit.nnz(crate::admm::TRIPLET_THRESHOLD),
    })
}
