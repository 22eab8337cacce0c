//! On-disk forms of a fit: `W` as coordinate triplets, everything else as JSON.

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::SarFit;
use crate::{Error, Result};

/// Entries at or below this are omitted from the triplet file.
pub const TRIPLET_THRESHOLD: f64 = 1e-8;

/// Writes `row_id,col_id,weight` for every entry above [`TRIPLET_THRESHOLD`].
pub fn write_w_triplets(path: impl AsRef<Path>, w: &DMatrix<f64>, ids: &[String]) -> Result<usize> {
    let path = path.as_ref();
    if w.nrows() != ids.len() || w.ncols() != ids.len() {
        return Err(Error::DimensionMismatch(format!("W is {:?} but there are {} ids", w.shape(), ids.len())));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = csv::Writer::from_writer(file);
    out.write_record(["row_id", "col_id", "weight"])?;
    let mut count = 0;
    for i in 0..w.nrows() {
        for j in 0..w.ncols() {
            let v = w[(i, j)];
            if v > TRIPLET_THRESHOLD {
                out.write_record([ids[i].as_str(), ids[j].as_str(), &v.to_string()])?;
                count += 1;
            }
        }
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(count)
}

#[derive(Deserialize)]
struct Triplet {
    row_id: String,
    col_id: String,
    weight: f64,
}

/// Rebuilds a dense `W` over `ids` from a triplet file.
pub fn read_w_triplets(path: impl AsRef<Path>, ids: &[String]) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut w = DMatrix::zeros(ids.len(), ids.len());
    for rec in reader.deserialize() {
        let t: Triplet = rec?;
        let i = *index.get(t.row_id.as_str()).ok_or_else(|| Error::UnknownId(t.row_id.clone()))?;
        let j = *index.get(t.col_id.as_str()).ok_or_else(|| Error::UnknownId(t.col_id.clone()))?;
        if !t.weight.is_finite() {
            return Err(Error::NonFinite("W triplet weight"));
        }
        w[(i, j)] = t.weight;
    }
    Ok(w)
}

/// Everything in a fit except the matrix itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub lambda1: f64,
    pub beta: Vec<f64>,
    pub r_squared: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub rho1_final: f64,
    pub nnz: usize,
    pub elapsed_secs: f64,
    pub final_primal_residual: Option<f64>,
    pub final_dual_residual: Option<f64>,
    pub primal_tolerance: f64,
    pub dual_tolerance: f64,
}

impl FitSummary {
    pub fn from_fit(fit: &SarFit) -> Self {
        let last = fit.residual_history.last();
        Self {
            lambda1: fit.lambda1,
            beta: fit.beta.clone(),
            r_squared: fit.r_squared,
            objective: fit.objective,
            iterations: fit.iterations,
            converged: fit.converged,
            rho1_final: fit.rho1,
            nnz: fit.nnz(TRIPLET_THRESHOLD),
            elapsed_secs: fit.elapsed_secs,
            final_primal_residual: last.map(|r| r.0),
            final_dual_residual: last.map(|r| r.1),
            primal_tolerance: fit.tolerances.0,
            dual_tolerance: fit.tolerances.1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_round_trip_above_threshold() {
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let w = DMatrix::from_row_slice(3, 3, &[0.0, 0.25, 1e-9, 0.1 + 0.2, 0.0, 0.0, 0.0, 7.0, 0.0]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.csv");
        assert_eq!(write_w_triplets(&path, &w, &ids).unwrap(), 3);
        let back = read_w_triplets(&path, &ids).unwrap();
        let mut expected = w.clone();
        expected[(0, 2)] = 0.0;
        assert_eq!(back, expected);
    }

    #[test]
    fn unknown_ids_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.csv");
        std::fs::write(&path, "row_id,col_id,weight\na,z,0.5\n").unwrap();
        let ids = vec!["a".to_string(), "b".to_string()];
        assert!(matches!(read_w_triplets(&path, &ids), Err(Error::UnknownId(id)) if id == "z"));
    }
}
