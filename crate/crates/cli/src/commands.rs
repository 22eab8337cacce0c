//! One function per subcommand. Each reads the resolved config, writes its
//! artifacts and returns the one-line summary.

use anyhow::{bail, Context, Result};
use nalgebra::DVector;
use serde::Serialize;

use sarlearn::admm::{fit_admm, lambda_grid, lambda_sweep, read_w_triplets, write_w_triplets, FitSummary, SarFit, TRIPLET_THRESHOLD};
use sarlearn::bench::{run_full_fit, run_scaling};
use sarlearn::clustering::{cluster_w, read_cluster_labels, write_clusters_csv, ClusterAssignment};
use sarlearn::dataset::Dataset;
use sarlearn::ols::fit_ols;
use sarlearn::sar_fixed::{build_adjacency_weights, build_knn_weights, fit_sar_ml, read_edge_list};
use sarlearn::spillover::{read_scenario, write_spillover_csv, SpilloverSolver};
use sarlearn::submarkets::{evaluate_submarkets, write_report_json, write_test_rows_csv};
use sarlearn::synth::{default_beta, generate_dataset, generate_w, spectral_radius};

use crate::config::RunConfig;
use crate::output::{self, BetaFile, OutDir};

pub fn fit_ols_cmd(cfg: &RunConfig, out: &OutDir) -> Result<String> {
    let d = cfg.data.load()?;
    let fit = fit_ols(d.x(), d.y())?;
    write_beta(out, &d, "ols", fit.beta.clone(), None, None)?;
    output::write_json(&out.file("report.json"), &serde_json::json!({ "n": d.n(), "p": d.p(), "dependent": d.dependent_name(), "fit": fit }))?;
    output::write_predictions(&out.plot("predictions.csv"), d.ids(), d.y().as_slice(), &fit.fitted)?;
    Ok(format!("fit-ols: n={} p={} R2={:.4}", d.n(), d.p(), fit.r_squared))
}

pub fn fit_sar_cmd(cfg: &RunConfig, out: &OutDir) -> Result<String> {
    let d = cfg.data.load()?;
    let w = match (&cfg.sar.edges, d.coords()) {
        (Some(path), _) => build_adjacency_weights(d.ids(), &read_edge_list(path)?)?,
        (None, Some(coords)) => build_knn_weights(coords, cfg.sar.k_neighbours)?,
        (None, None) => bail!("fit-sar needs coordinate columns (--coords) or an edge list (--edges)"),
    };
    let fit = fit_sar_ml(d.y(), d.x(), &w, &cfg.sar.options())?;
    write_beta(out, &d, "sar", fit.beta.clone(), None, Some(fit.rho))?;
    output::write_json(
        &out.file("report.json"),
        &serde_json::json!({ "n": d.n(), "p": d.p(), "weights": w.source, "rho": fit.rho, "beta": fit.beta, "objective": fit.objective, "r_squared": fit.r_squared }),
    )?;
    output::write_predictions(&out.plot("predictions.csv"), d.ids(), d.y().as_slice(), &fit.fitted)?;
    output::write_profile(&out.plot("sar_profile.csv"), &fit.log_likelihood_profile)?;
    Ok(format!("fit-sar: n={} rho={:.4} R2={:.4}", d.n(), fit.rho, fit.r_squared))
}

#[derive(Serialize)]
struct AdmmReport<'a> {
    n: usize,
    p: usize,
    dependent: &'a str,
    fit: FitSummary,
    r_squared_ols: f64,
}

pub fn fit_admm_cmd(cfg: &RunConfig, out: &OutDir) -> Result<String> {
    let d = cfg.data.load()?;
    let fit = learn(cfg, &d, out)?;
    let ols = fit_ols(d.x(), d.y())?;
    output::write_json(
        &out.file("report.json"),
        &AdmmReport { n: d.n(), p: d.p(), dependent: d.dependent_name(), fit: fit.summary(), r_squared_ols: ols.r_squared },
    )?;
    output::write_predictions(&out.plot("predictions.csv"), d.ids(), d.y().as_slice(), &fit.fitted)?;
    output::write_residual_history(&out.plot("residual_history.csv"), &fit)?;
    Ok(format!(
        "fit-admm: lambda1={} R2={:.4} (ols {:.4}) iterations={} converged={} nnz={}",
        fit.lambda1,
        fit.r_squared,
        ols.r_squared,
        fit.iterations,
        fit.converged,
        fit.nnz(TRIPLET_THRESHOLD)
    ))
}

pub fn sweep_cmd(cfg: &RunConfig, out: &OutDir) -> Result<String> {
    let d = cfg.data.load()?;
    let lambdas = cfg.sweep.lambdas.clone().unwrap_or_else(|| lambda_grid(cfg.sweep.max, cfg.sweep.step));
    let fits = lambda_sweep(d.y(), d.x(), &lambdas, &cfg.admm, cfg.sweep.warm_start)?;
    let summaries: Vec<FitSummary> = fits.iter().map(SarFit::summary).collect();
    output::write_json(&out.file("report.json"), &serde_json::json!({ "warm_start": cfg.sweep.warm_start, "fits": summaries }))?;
    output::write_sweep(&out.plot("sweep.csv"), &fits, d.column_names(), TRIPLET_THRESHOLD)?;
    let best = fits.iter().max_by(|a, b| a.r_squared.total_cmp(&b.r_squared)).expect("grid is non-empty");
    let converged = fits.iter().filter(|f| f.converged).count();
    Ok(format!(
        "sweep: {} fits ({converged} converged), best R2={:.4} at lambda1={}",
        fits.len(),
        best.r_squared,
        best.lambda1
    ))
}

pub fn cluster_cmd(cfg: &RunConfig, out: &OutDir) -> Result<String> {
    let d = cfg.data.load()?;
    let (a, summary) = cluster_stage(cfg, &d, out)?;
    output::write_json(&out.file("report.json"), &summary)?;
    Ok(format!("cluster: k={} sizes={:?}", a.k, a.sizes()))
}

pub fn submarkets_cmd(cfg: &RunConfig, out: &OutDir) -> Result<String> {
    let d = cfg.data.load()?;
    let assignment = match &cfg.submarkets.clusters {
        Some(path) => read_cluster_labels(path, d.ids(), cfg.seed)?,
        None => {
            let (a, summary) = cluster_stage(cfg, &d, out)?;
            output::write_json(&out.file("cluster_report.json"), &summary)?;
            a
        }
    };
    let report = evaluate_submarkets(&d, &assignment, cfg.submarkets.per_cluster, cfg.seed)?;
    write_report_json(out.file("report.json"), &report)?;
    write_test_rows_csv(out.plot("submarket_predictions.csv"), &report)?;
    let per: Vec<String> = report.clusters.iter().map(|c| format!("{:.4}/{:.4}", c.rmse_local, c.rmse_global)).collect();
    Ok(format!(
        "submarkets: k={} test={} RMSE local={:.4} global={:.4}; per cluster local/global {}",
        assignment.k,
        report.n_test,
        report.rmse_local,
        report.rmse_global,
        per.join(" ")
    ))
}

pub fn spillover_cmd(cfg: &RunConfig, out: &OutDir) -> Result<String> {
    let d = cfg.data.load()?;
    let s = &cfg.spillover;
    let Some(scenario) = &s.scenario else {
        bail!("spillover needs a scenario file (--scenario)");
    };
    let edits = read_scenario(scenario, &d)?;
    let (w, beta) = match (&s.w, &s.beta) {
        (Some(w), Some(b)) => (read_w_triplets(w, d.ids())?, BetaFile::read(b, d.column_names())?),
        (None, None) => {
            let fit = learn(cfg, &d, out)?;
            (fit.w, DVector::from_vec(fit.beta))
        }
        _ => bail!("--w and --beta must be given together"),
    };
    let labels = match &s.clusters {
        Some(path) => Some(read_cluster_labels(path, d.ids(), cfg.seed)?.labels),
        None => None,
    };
    let result = SpilloverSolver::new(&w, &beta)?.scenario(d.x(), &edits)?;
    write_spillover_csv(out.plot("spillover.csv"), d.ids(), &result, labels.as_deref())?;
    let ranked = result.ranked_rows();
    let top: Vec<serde_json::Value> = ranked
        .iter()
        .take(10)
        .map(|&i| serde_json::json!({ "id": d.ids()[i], "delta": result.delta[i], "edited": result.perturbed_rows.contains(&i) }))
        .collect();
    output::write_json(
        &out.file("report.json"),
        &serde_json::json!({ "edits": edits.len(), "spectral_radius": result.spectral_radius, "perturbed_rows": result.perturbed_rows, "largest_changes": top }),
    )?;
    let moved = result.delta.iter().filter(|v| v.abs() > 1e-12).count();
    Ok(format!(
        "spillover: {} edits, {moved} locations change, largest |delta|={:.4} at {}, spectral radius {:.4}",
        edits.len(),
        result.delta[ranked[0]].abs(),
        d.ids()[ranked[0]],
        result.spectral_radius
    ))
}

pub fn synth_cmd(cfg: &RunConfig, out: &OutDir) -> Result<String> {
    let spec = &cfg.synth;
    let w = generate_w(spec)?;
    let beta = default_beta(spec.p);
    let d = generate_dataset(&w, &beta, spec)?;
    d.write_csv(out.file("data.csv"))?;
    let nnz = write_w_triplets(out.file("w_true.csv"), &w, d.ids())?;
    output::write_json(
        &out.file("beta_true.json"),
        &BetaFile { model: "truth".into(), columns: d.column_names().to_vec(), beta: beta.as_slice().to_vec(), lambda1: None, rho: None },
    )?;
    let radius = spectral_radius(&w)?;
    output::write_json(&out.file("report.json"), &serde_json::json!({ "spec": spec, "nnz": nnz, "spectral_radius": radius }))?;
    Ok(format!("synth: n={} p={} nnz={nnz} spectral radius {radius:.4}", spec.n, spec.p))
}

pub fn bench_cmd(cfg: &RunConfig, out: &OutDir) -> Result<String> {
    let harness = cfg.bench.harness(cfg.seed);
    let full = run_full_fit(cfg.bench.n, &harness)?;
    let scaling = if cfg.bench.scaling { Some(run_scaling(&harness)?) } else { None };
    if let Some(s) = &scaling {
        output::write_scaling(&out.plot("scaling.csv"), &s.points)?;
    }
    output::write_json(&out.file("report.json"), &serde_json::json!({ "full_fit": full, "scaling": scaling }))?;
    let mut line = format!(
        "bench: n={} p={} lambda1={} wall {:.2} s, {} iterations, converged={}",
        full.n, full.p, full.lambda1, full.wall_secs, full.iterations, full.converged
    );
    if let Some(s) = scaling {
        line.push_str(&format!(", per-iteration log-log slope {:.2}", s.slope));
    }
    Ok(line)
}

/// Fits `W` and `β` with `[admm]` and writes `w.csv` and `beta.json`.
fn learn(cfg: &RunConfig, d: &Dataset, out: &OutDir) -> Result<SarFit> {
    let fit = fit_admm(d.y(), d.x(), &cfg.admm)?;
    if !fit.converged {
        log::warn!("ADMM did not converge in {} iterations; results use the last iterate", fit.iterations);
    }
    write_w_triplets(out.file("w.csv"), &fit.w, d.ids())?;
    write_beta(out, d, "admm", fit.beta.clone(), Some(fit.lambda1), None)?;
    Ok(fit)
}

/// Clusters `W` (read or fitted), writes `clusters.csv` and the spectral plot
/// data, and returns the assignment with a JSON summary.
fn cluster_stage(cfg: &RunConfig, d: &Dataset, out: &OutDir) -> Result<(ClusterAssignment, serde_json::Value)> {
    let w = match &cfg.cluster.w {
        Some(path) => read_w_triplets(path, d.ids()).with_context(|| format!("reading {}", path.display()))?,
        None => learn(cfg, d, out)?.w,
    };
    let (emb, a) = cluster_w(&w, cfg.cluster.k, cfg.seed)?;
    write_clusters_csv(out.file("clusters.csv"), d.ids(), &a, &emb)?;
    output::write_eigenvalues(&out.plot("eigenvalues.csv"), &emb.eigenvalues)?;
    output::write_embedding(&out.plot("embedding.csv"), d.ids(), &a.labels, &emb.coords, d.y(), d.dependent_name())?;
    if let Some(coords) = d.coords() {
        output::write_cluster_map(&out.plot("cluster_map.csv"), d.ids(), &a.labels, coords)?;
    }
    let summary = serde_json::json!({
        "k": a.k,
        "sizes": a.sizes(),
        "inertia": a.inertia,
        "seed": a.seed,
        "leading_eigenvalues": &emb.eigenvalues[..emb.eigenvalues.len().min(20)],
    });
    Ok((a, summary))
}

fn write_beta(out: &OutDir, d: &Dataset, model: &str, beta: Vec<f64>, lambda1: Option<f64>, rho: Option<f64>) -> Result<()> {
    output::write_json(&out.file("beta.json"), &BetaFile { model: model.into(), columns: d.column_names().to_vec(), beta, lambda1, rho })
}
