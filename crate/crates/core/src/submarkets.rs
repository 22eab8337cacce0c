//! Global versus per-submarket OLS on a held-out split.
//!
//! A fixed number of rows per cluster is held out; one OLS model is fitted
//! on the pooled training rows and one per cluster on that cluster's
//! training rows, and both predict every held-out row.

use std::fs::File;
use std::path::Path;

use serde::Serialize;

use crate::clustering::ClusterAssignment;
use crate::dataset::{split_by_cluster, Dataset, TransformRecord};
use crate::ols::{fit_ols, rmse, OlsFit};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct TestRow {
    pub id: String,
    /// Row in the parent dataset.
    pub index: usize,
    pub cluster: usize,
    pub actual: f64,
    pub global_pred: f64,
    pub local_pred: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClusterSummary {
    pub cluster: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub rmse_global: f64,
    pub rmse_local: f64,
    /// The cluster had too few training rows and reused the global fit.
    pub local_fallback: bool,
    pub local_fit: Option<OlsFit>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SubmarketReport {
    pub per_cluster: usize,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub dependent: String,
    pub transforms: Vec<TransformRecord>,
    pub global_fit: OlsFit,
    pub clusters: Vec<ClusterSummary>,
    pub rmse_global: f64,
    pub rmse_local: f64,
    pub test_predictions: Vec<TestRow>,
}

impl SubmarketReport {
    pub fn rmse_local_per_cluster(&self) -> Vec<f64> {
        self.clusters.iter().map(|c| c.rmse_local).collect()
    }

    pub fn rmse_global_per_cluster(&self) -> Vec<f64> {
        self.clusters.iter().map(|c| c.rmse_global).collect()
    }
}

pub fn evaluate_submarkets(d: &Dataset, assignment: &ClusterAssignment, per_cluster: usize, seed: u64) -> Result<SubmarketReport> {
    let split = split_by_cluster(d, assignment, per_cluster, seed)?;
    let global_fit = fit_ols(split.train.x(), split.train.y())?;
    let global_pred = global_fit.predict(split.test.x())?;

    let mut clusters = Vec::with_capacity(assignment.k);
    let mut local_pred = vec![f64::NAN; split.test.n()];
    for c in 0..assignment.k {
        let train_rows: Vec<usize> = split
            .train_indices
            .iter()
            .enumerate()
            .filter(|(_, &r)| assignment.labels[r] == c)
            .map(|(k, _)| k)
            .collect();
        let test_rows: Vec<usize> = split
            .test_indices
            .iter()
            .enumerate()
            .filter(|(_, &r)| assignment.labels[r] == c)
            .map(|(k, _)| k)
            .collect();
        let fallback = train_rows.len() <= d.p();
        let local_fit = if fallback {
            log::warn!(
                "cluster {c} has {} training rows for {} coefficients; its test rows use the global fit",
                train_rows.len(),
                d.p()
            );
            None
        } else {
            let train = split.train.subset(&train_rows)?;
            Some(fit_ols(train.x(), train.y())?)
        };
        let test = split.test.subset(&test_rows)?;
        let preds = match &local_fit {
            Some(fit) => fit.predict(test.x())?.as_slice().to_vec(),
            None => test_rows.iter().map(|&k| global_pred[k]).collect(),
        };
        for (&k, &p) in test_rows.iter().zip(&preds) {
            local_pred[k] = p;
        }
        let actual = test.y().as_slice();
        let g: Vec<f64> = test_rows.iter().map(|&k| global_pred[k]).collect();
        clusters.push(ClusterSummary {
            cluster: c,
            n_train: train_rows.len(),
            n_test: test_rows.len(),
            rmse_global: rmse(actual, &g),
            rmse_local: rmse(actual, &preds),
            local_fallback: fallback,
            local_fit,
        });
    }

    let test_predictions: Vec<TestRow> = split
        .test_indices
        .iter()
        .enumerate()
        .map(|(k, &r)| TestRow {
            id: d.ids()[r].clone(),
            index: r,
            cluster: assignment.labels[r],
            actual: split.test.y()[k],
            global_pred: global_pred[k],
            local_pred: local_pred[k],
        })
        .collect();
    let actual: Vec<f64> = test_predictions.iter().map(|t| t.actual).collect();
    let g: Vec<f64> = test_predictions.iter().map(|t| t.global_pred).collect();
    let l: Vec<f64> = test_predictions.iter().map(|t| t.local_pred).collect();

    Ok(SubmarketReport {
        per_cluster,
        seed,
        n_train: split.train.n(),
        n_test: split.test.n(),
        dependent: d.dependent_name().to_string(),
        transforms: d.transforms().to_vec(),
        rmse_global: rmse(&actual, &g),
        rmse_local: rmse(&actual, &l),
        global_fit,
        clusters,
        test_predictions,
    })
}

pub fn write_report_json(path: impl AsRef<Path>, report: &SubmarketReport) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(file, report)?;
    Ok(())
}

/// Flat `id,index,cluster,actual,global_pred,local_pred` rows.
pub fn write_test_rows_csv(path: impl AsRef<Path>, report: &SubmarketReport) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for row in &report.test_predictions {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::clustered_regression;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn split_sizes_follow_protocol() {
        let (d, labels, _) = clustered_regression(&[300, 200, 200, 162], 3, 0.1, 1).unwrap();
        let a = ClusterAssignment { labels, k: 4, inertia: 0.0, seed: 0 };
        let r = evaluate_submarkets(&d, &a, 30, 7).unwrap();
        assert_eq!((r.n_train, r.n_test), (742, 120));
        assert_eq!(r.test_predictions.len(), 120);
        assert!(r.clusters.iter().all(|c| c.n_test == 30 && !c.local_fallback));
    }

    #[test]
    fn single_cluster_local_equals_global() {
        let (d, _, _) = clustered_regression(&[80], 2, 0.5, 2).unwrap();
        let a = ClusterAssignment { labels: vec![0; 80], k: 1, inertia: 0.0, seed: 0 };
        let r = evaluate_submarkets(&d, &a, 30, 3).unwrap();
        for t in &r.test_predictions {
            assert!((t.global_pred - t.local_pred).abs() <= 1e-10);
        }
        assert!((r.rmse_global - r.rmse_local).abs() <= 1e-10);
    }

    #[test]
    fn rows_reproduce_reported_rmse() {
        let (d, labels, _) = clustered_regression(&[60, 70, 50], 2, 0.3, 4).unwrap();
        let a = ClusterAssignment { labels, k: 3, inertia: 0.0, seed: 0 };
        let r = evaluate_submarkets(&d, &a, 20, 5).unwrap();
        for c in &r.clusters {
            let rows: Vec<&TestRow> = r.test_predictions.iter().filter(|t| t.cluster == c.cluster).collect();
            let mse_l: f64 = rows.iter().map(|t| (t.actual - t.local_pred).powi(2)).sum::<f64>() / rows.len() as f64;
            let mse_g: f64 = rows.iter().map(|t| (t.actual - t.global_pred).powi(2)).sum::<f64>() / rows.len() as f64;
            assert!((mse_l.sqrt() - c.rmse_local).abs() <= 1e-12);
            assert!((mse_g.sqrt() - c.rmse_global).abs() <= 1e-12);
        }
    }

    #[test]
    fn distinct_coefficients_favour_local_models() {
        let (d, labels, _) = clustered_regression(&[100, 100, 100, 100], 3, 0.05, 6).unwrap();
        let a = ClusterAssignment { labels, k: 4, inertia: 0.0, seed: 0 };
        let r = evaluate_submarkets(&d, &a, 30, 42).unwrap();
        for c in &r.clusters {
            assert!(c.rmse_local < c.rmse_global, "cluster {}: {} vs {}", c.cluster, c.rmse_local, c.rmse_global);
        }
    }

    #[test]
    fn tiny_cluster_falls_back_to_global() {
        // cluster 1 keeps 2 training rows for 3 coefficients
        let n = 40;
        let x = DMatrix::from_fn(n, 3, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0 + j as f64 * 0.1);
        let y = DVector::from_fn(n, |i, _| (i as f64).sin());
        let d = Dataset::from_arrays(y, x).unwrap();
        let mut labels = vec![0; n];
        for l in labels.iter_mut().skip(n - 5) {
            *l = 1;
        }
        let a = ClusterAssignment { labels, k: 2, inertia: 0.0, seed: 0 };
        let r = evaluate_submarkets(&d, &a, 3, 1).unwrap();
        assert!(r.clusters[1].local_fallback);
        assert!(r.clusters[1].local_fit.is_none());
        assert!((r.clusters[1].rmse_local - r.clusters[1].rmse_global).abs() < 1e-15);
    }

    #[test]
    fn report_files() {
        let (d, labels, _) = clustered_regression(&[40, 40], 2, 0.1, 8).unwrap();
        let a = ClusterAssignment { labels, k: 2, inertia: 0.0, seed: 0 };
        let r = evaluate_submarkets(&d, &a, 10, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_report_json(dir.path().join("report.json"), &r).unwrap();
        write_test_rows_csv(dir.path().join("rows.csv"), &r).unwrap();
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(v["n_test"], 20);
        let text = std::fs::read_to_string(dir.path().join("rows.csv")).unwrap();
        assert!(text.starts_with("id,index,cluster,actual,global_pred,local_pred\n"));
        assert_eq!(text.lines().count(), 21);
    }
}
