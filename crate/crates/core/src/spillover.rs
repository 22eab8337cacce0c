//! What-if prediction through a learnt `W`: edit some explanatory values and
//! propagate the change with `y = (I − W)⁻¹ Xβ`.

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Dyn, LU};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::numerics::{general_eigenvalues, power_iteration_radius, sym_eig};
use crate::{Error, Result};

/// `I − W` must have spectral radius of `W` below `1 − RADIUS_MARGIN`.
pub const RADIUS_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edit {
    pub row: usize,
    pub column: usize,
    pub value: f64,
}

/// Copy of `x` with the edits applied.
pub fn perturb(x: &DMatrix<f64>, edits: &[Edit]) -> Result<DMatrix<f64>> {
    let mut out = x.clone();
    for e in edits {
        if e.row >= x.nrows() || e.column >= x.ncols() {
            return Err(Error::IndexOutOfRange(format!(
                "edit at ({}, {}) outside a {}x{} design",
                e.row,
                e.column,
                x.nrows(),
                x.ncols()
            )));
        }
        if !e.value.is_finite() {
            return Err(Error::NonFinite("edit value"));
        }
        out[(e.row, e.column)] = e.value;
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct SpilloverResult {
    pub y_base: Vec<f64>,
    pub y_new: Vec<f64>,
    /// `y_base − y_new`.
    pub delta: Vec<f64>,
    pub perturbed_rows: Vec<usize>,
    pub spectral_radius: f64,
}

impl SpilloverResult {
    /// Row indices ordered by decreasing `|delta|`.
    pub fn ranked_rows(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.delta.len()).collect();
        idx.sort_by(|&a, &b| self.delta[b].abs().total_cmp(&self.delta[a].abs()).then(a.cmp(&b)));
        idx
    }
}

/// `I − W` factored once for any number of scenarios.
#[derive(Debug, Clone)]
pub struct SpilloverSolver {
    lu: LU<f64, Dyn, Dyn>,
    beta: DVector<f64>,
    spectral_radius: f64,
}

/// Certifies `ρ(W) < 1 − RADIUS_MARGIN` and returns the radius estimate.
///
/// For nonnegative `W` the top eigenvalue of `(W + Wᵀ)/2` bounds `ρ(W)` from
/// above, which settles most cases cheaply; otherwise the full spectrum is
/// computed.
pub fn check_spectral_radius(w: &DMatrix<f64>) -> Result<f64> {
    let limit = 1.0 - RADIUS_MARGIN;
    let (power, converged) = power_iteration_radius(w, 5_000, 1e-12);
    if w.iter().all(|v| *v >= 0.0) {
        let sym = (w + w.transpose()) * 0.5;
        let bound = sym_eig(&sym)?.values.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if bound < limit {
            return Ok(if converged { power } else { bound });
        }
    }
    if converged && power >= limit {
        return Err(Error::SpectralRadius { estimate: power, method: "power iteration" });
    }
    let exact = general_eigenvalues(w)?.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if exact >= limit {
        return Err(Error::SpectralRadius { estimate: exact, method: "eigenvalues" });
    }
    Ok(exact)
}

impl SpilloverSolver {
    pub fn new(w: &DMatrix<f64>, beta: &DVector<f64>) -> Result<Self> {
        if !w.is_square() {
            return Err(Error::DimensionMismatch(format!("W must be square, got {:?}", w.shape())));
        }
        if w.iter().chain(beta.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("spillover model"));
        }
        let spectral_radius = check_spectral_radius(w)?;
        let n = w.nrows();
        let lu = (DMatrix::identity(n, n) - w).lu();
        Ok(Self {
            lu,
            beta: beta.clone(),
            spectral_radius,
        })
    }

    pub fn spectral_radius(&self) -> f64 {
        self.spectral_radius
    }

    /// `(I − W)⁻¹ Xβ`.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        let n = self.lu.l().nrows();
        if x.nrows() != n || x.ncols() != self.beta.len() {
            return Err(Error::DimensionMismatch(format!(
                "X is {:?}, expected {n}x{}",
                x.shape(),
                self.beta.len()
            )));
        }
        self.lu.solve(&(x * &self.beta)).ok_or_else(|| Error::Singular("I - W".into()))
    }

    /// Baseline at `x` against the prediction at `x` with `edits` applied.
    pub fn scenario(&self, x: &DMatrix<f64>, edits: &[Edit]) -> Result<SpilloverResult> {
        let x_new = perturb(x, edits)?;
        let mut rows: Vec<usize> = edits.iter().map(|e| e.row).collect();
        rows.sort_unstable();
        rows.dedup();
        self.compare(x, &x_new, rows)
    }

    pub fn compare(&self, x: &DMatrix<f64>, x_new: &DMatrix<f64>, perturbed_rows: Vec<usize>) -> Result<SpilloverResult> {
        let y_base = self.predict(x)?;
        let y_new = self.predict(x_new)?;
        let delta = &y_base - &y_new;
        Ok(SpilloverResult {
            y_base: y_base.as_slice().to_vec(),
            y_new: y_new.as_slice().to_vec(),
            delta: delta.as_slice().to_vec(),
            perturbed_rows,
            spectral_radius: self.spectral_radius,
        })
    }
}

/// One-shot form of [`SpilloverSolver::compare`].
pub fn predict_spillover(w: &DMatrix<f64>, beta: &DVector<f64>, x: &DMatrix<f64>, x_new: &DMatrix<f64>) -> Result<SpilloverResult> {
    let rows = (0..x.nrows())
        .filter(|&i| x_new.nrows() == x.nrows() && x.row(i) != x_new.row(i))
        .collect();
    SpilloverSolver::new(w, beta)?.compare(x, x_new, rows)
}

#[derive(Deserialize)]
struct ScenarioRow {
    id: String,
    column_name: String,
    new_value: f64,
}

/// Reads `id,column_name,new_value` rows and resolves them against `data`.
pub fn read_scenario(path: impl AsRef<Path>, data: &Dataset) -> Result<Vec<Edit>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut edits = Vec::new();
    for rec in reader.deserialize() {
        let r: ScenarioRow = rec?;
        let row = data.index_of(&r.id).ok_or_else(|| Error::UnknownId(r.id.clone()))?;
        let column = data.column_index(&r.column_name).ok_or_else(|| Error::UnknownColumn(r.column_name.clone()))?;
        edits.push(Edit { row, column, value: r.new_value });
    }
    Ok(edits)
}

/// Writes `id,y_base,y_new,delta` and, when given, a `label` column.
pub fn write_spillover_csv(path: impl AsRef<Path>, ids: &[String], result: &SpilloverResult, labels: Option<&[usize]>) -> Result<()> {
    let path = path.as_ref();
    if ids.len() != result.delta.len() || labels.is_some_and(|l| l.len() != ids.len()) {
        return Err(Error::DimensionMismatch("ids, labels and spillover result differ in length".into()));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header = vec!["id", "y_base", "y_new", "delta"];
    if labels.is_some() {
        header.push("label");
    }
    w.write_record(&header)?;
    for (i, id) in ids.iter().enumerate() {
        let mut rec = vec![
            id.clone(),
            result.y_base[i].to_string(),
            result.y_new[i].to_string(),
            result.delta[i].to_string(),
        ];
        if let Some(l) = labels {
            rec.push(l[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Map from id to row for callers that build edits by hand.
pub fn id_index(ids: &[String]) -> HashMap<&str, usize> {
    ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn sparse_stable_w(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let mut w = DMatrix::from_fn(n, n, |i, j| if i != j && rng.random_bool(0.3) { rng.random_range(0.0..1.0) } else { 0.0 });
        let max_row = w.row_iter().map(|r| r.sum()).fold(0.0, f64::max);
        if max_row > 0.0 {
            w *= 0.8 / max_row;
        }
        w
    }

    #[test]
    fn perturb_cases() {
        let x = DMatrix::from_row_slice(3, 2, &[1., 2., 3., 4., 5., 6.]);
        assert_eq!(perturb(&x, &[]).unwrap(), x);
        let edits = [
            Edit { row: 0, column: 1, value: 9.0 },
            Edit { row: 1, column: 0, value: 8.0 },
            Edit { row: 2, column: 0, value: 7.0 },
        ];
        let out = perturb(&x, &edits).unwrap();
        assert_eq!(out.iter().zip(x.iter()).filter(|(a, b)| a != b).count(), 3);
        assert_eq!(x[(0, 1)], 2.0);
        assert!(matches!(perturb(&x, &[Edit { row: 3, column: 0, value: 0.0 }]), Err(Error::IndexOutOfRange(_))));
        assert!(perturb(&x, &[Edit { row: 0, column: 2, value: 0.0 }]).is_err());
    }

    #[test]
    fn zero_w_reduces_to_linear_prediction() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&mut rng, 6, 2);
        let x_new = random(&mut rng, 6, 2);
        let beta = DVector::from_vec(vec![0.7, -1.1]);
        let r = predict_spillover(&DMatrix::zeros(6, 6), &beta, &x, &x_new).unwrap();
        let expected = &x_new * &beta;
        for i in 0..6 {
            assert_eq!(r.y_new[i], expected[i]);
        }
        assert_eq!(r.spectral_radius, 0.0);
    }

    #[test]
    fn identical_inputs_give_zero_delta() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = sparse_stable_w(&mut rng, 10);
        let x = random(&mut rng, 10, 3);
        let r = predict_spillover(&w, &DVector::from_vec(vec![1.0, 2.0, 3.0]), &x, &x).unwrap();
        assert!(r.delta.iter().all(|d| d.abs() <= 1e-10));
        assert!(r.perturbed_rows.is_empty());
    }

    #[test]
    fn nilpotent_w_matches_neumann_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 5;
        let w = DMatrix::from_fn(n, n, |i, j| if j > i { rng.random_range(0.0..2.0) } else { 0.0 });
        let x_new = random(&mut rng, n, 2);
        let beta = DVector::from_vec(vec![1.5, -0.5]);
        let solver = SpilloverSolver::new(&w, &beta).unwrap();
        let y = solver.predict(&x_new).unwrap();
        let mut series = DMatrix::identity(n, n);
        let mut power = DMatrix::identity(n, n);
        for _ in 1..n {
            power = &power * &w;
            series += &power;
        }
        let oracle = series * (&x_new * &beta);
        assert!((y - oracle).amax() <= 1e-10);
    }

    #[test]
    fn deltas_are_linear_in_edits() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = sparse_stable_w(&mut rng, 12);
        let x = random(&mut rng, 12, 2);
        let solver = SpilloverSolver::new(&w, &DVector::from_vec(vec![0.4, 1.2])).unwrap();
        let e1 = Edit { row: 2, column: 0, value: 3.0 };
        let e2 = Edit { row: 7, column: 1, value: -2.0 };
        let d1 = solver.scenario(&x, &[e1]).unwrap().delta;
        let d2 = solver.scenario(&x, &[e2]).unwrap().delta;
        let both = solver.scenario(&x, &[e1, e2]).unwrap();
        assert_eq!(both.perturbed_rows, vec![2, 7]);
        for i in 0..12 {
            assert!((both.delta[i] - d1[i] - d2[i]).abs() <= 1e-9);
        }
    }

    #[test]
    fn unreachable_rows_do_not_move() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut w = sparse_stable_w(&mut rng, 8);
        // row 3 depends on nothing, so it sees only its own X row
        w.row_mut(3).fill(0.0);
        let x = random(&mut rng, 8, 2);
        let solver = SpilloverSolver::new(&w, &DVector::from_vec(vec![1.0, 1.0])).unwrap();
        let r = solver.scenario(&x, &[Edit { row: 5, column: 0, value: 4.0 }]).unwrap();
        assert!(r.delta[3].abs() <= 1e-10);
        let own = solver.scenario(&x, &[Edit { row: 3, column: 0, value: x[(3, 0)] + 1.0 }]).unwrap();
        assert!((own.delta[3] + 1.0).abs() <= 1e-10);
    }

    #[test]
    fn unstable_w_is_rejected_with_estimate() {
        let w = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        match SpilloverSolver::new(&w, &DVector::from_vec(vec![1.0])) {
            Err(Error::SpectralRadius { estimate, .. }) => assert!((estimate - 1.0).abs() < 1e-9),
            other => panic!("expected spectral radius error, got {other:?}"),
        }
        // symmetrized bound exceeds 1, exact radius does not
        let w = DMatrix::from_row_slice(2, 2, &[0.0, 3.0, 0.0, 0.0]);
        let s = SpilloverSolver::new(&w, &DVector::from_vec(vec![1.0])).unwrap();
        assert_eq!(s.spectral_radius(), 0.0);
    }

    #[test]
    fn scenario_file_round_trip() {
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let x = DMatrix::from_row_slice(3, 2, &[1., 0., 0., 1., 1., 1.]);
        let data = Dataset::new(y, x, vec!["a".into(), "b".into(), "c".into()], "price", vec!["rooms".into(), "age".into()]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenario.csv");
        std::fs::write(&path, "id,column_name,new_value\nb,rooms,5\nc,age,2.5\n").unwrap();
        let edits = read_scenario(&path, &data).unwrap();
        assert_eq!(edits, vec![Edit { row: 1, column: 0, value: 5.0 }, Edit { row: 2, column: 1, value: 2.5 }]);

        std::fs::write(&path, "id,column_name,new_value\nz,rooms,5\n").unwrap();
        assert!(matches!(read_scenario(&path, &data), Err(Error::UnknownId(_))));
        std::fs::write(&path, "id,column_name,new_value\na,floors,5\n").unwrap();
        assert!(matches!(read_scenario(&path, &data), Err(Error::UnknownColumn(_))));

        let solver = SpilloverSolver::new(&DMatrix::zeros(3, 3), &DVector::from_vec(vec![1.0, 1.0])).unwrap();
        let r = solver.scenario(data.x(), &[Edit { row: 0, column: 0, value: 2.0 }]).unwrap();
        assert_eq!(r.ranked_rows()[0], 0);
        let out = dir.path().join("result.csv");
        write_spillover_csv(&out, data.ids(), &r, Some(&[0, 1, 1])).unwrap();
        let text = std::fs::read_to_string(&out).unwrap();
        assert!(text.starts_with("id,y_base,y_new,delta,label\na,1,2,-1,0\n"));
    }
}
