//! Output directory layout and the flat CSV/JSON writers behind it.

use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use sarlearn::admm::SarFit;
use sarlearn::bench::ScalingPoint;

pub const PLOTDATA: &str = "plotdata";

pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root.join(PLOTDATA)).with_context(|| format!("creating output directory {}", root.display()))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn plot(&self, name: &str) -> PathBuf {
        self.root.join(PLOTDATA).join(name)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(file, value).with_context(|| format!("writing {}", path.display()))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

/// Coefficients as written to `beta.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BetaFile {
    pub model: String,
    pub columns: Vec<String>,
    pub beta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda1: Option<f64>,
    /// Spatial lag of the fixed-W model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
}

impl BetaFile {
    pub fn read(path: &Path, columns: &[String]) -> Result<DVector<f64>> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let b: BetaFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if b.columns != columns {
            bail!("{} has columns {:?}, data has {:?}", path.display(), b.columns, columns);
        }
        Ok(DVector::from_vec(b.beta))
    }
}

/// `id,actual,predicted,residual`.
pub fn write_predictions(path: &Path, ids: &[String], actual: &[f64], predicted: &[f64]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["id", "actual", "predicted", "residual"])?;
    for ((id, a), p) in ids.iter().zip(actual).zip(predicted) {
        w.write_record([id.clone(), a.to_string(), p.to_string(), (a - p).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `iteration,primal,dual`.
pub fn write_residual_history(path: &Path, fit: &SarFit) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["iteration", "primal", "dual"])?;
    for (k, (p, d)) in fit.residual_history.iter().enumerate() {
        w.write_record([(k + 1).to_string(), p.to_string(), d.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `index,eigenvalue`, 1-based, descending.
pub fn write_eigenvalues(path: &Path, values: &[f64]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["index", "eigenvalue"])?;
    for (i, v) in values.iter().enumerate() {
        w.write_record([(i + 1).to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `id,label,e1,e2,<dependent>`: the leading two eigenvector coordinates
/// coloured by the dependent variable. `e2` is empty for a 1-d embedding.
pub fn write_embedding(path: &Path, ids: &[String], labels: &[usize], coords: &DMatrix<f64>, y: &DVector<f64>, dependent: &str) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["id", "label", "e1", "e2", dependent])?;
    for (i, id) in ids.iter().enumerate() {
        let e2 = if coords.ncols() > 1 { coords[(i, 1)].to_string() } else { String::new() };
        w.write_record([id.clone(), labels[i].to_string(), coords[(i, 0)].to_string(), e2, y[i].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `id,label,x,y` for choropleth-style maps.
pub fn write_cluster_map(path: &Path, ids: &[String], labels: &[usize], coords: &DMatrix<f64>) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["id", "label", "x", "y"])?;
    for (i, id) in ids.iter().enumerate() {
        w.write_record([id.clone(), labels[i].to_string(), coords[(i, 0)].to_string(), coords[(i, 1)].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `lambda1,nnz,r_squared,objective,iterations,converged,<beta per column>`.
pub fn write_sweep(path: &Path, fits: &[SarFit], columns: &[String], threshold: f64) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header: Vec<String> = ["lambda1", "nnz", "r_squared", "objective", "iterations", "converged"].map(String::from).to_vec();
    header.extend(columns.iter().map(|c| format!("beta_{c}")));
    w.write_record(&header)?;
    for f in fits {
        let mut rec = vec![
            f.lambda1.to_string(),
            f.nnz(threshold).to_string(),
            f.r_squared.to_string(),
            f.objective.to_string(),
            f.iterations.to_string(),
            f.converged.to_string(),
        ];
        rec.extend(f.beta.iter().map(|b| b.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// `rho,objective` probes of the fixed-W likelihood profile.
pub fn write_profile(path: &Path, profile: &[(f64, f64)]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["rho", "objective"])?;
    for (r, o) in profile {
        w.write_record([r.to_string(), o.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `n,secs_per_iter`.
pub fn write_scaling(path: &Path, points: &[ScalingPoint]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["n", "secs_per_iter"])?;
    for p in points {
        w.write_record([p.n.to_string(), p.secs_per_iter.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
