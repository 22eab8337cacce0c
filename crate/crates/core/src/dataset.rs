//! Loading, transforming and partitioning spatial regression datasets.

use std::collections::HashSet;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::ClusterAssignment;
use crate::{Error, Result};

/// What to do with rows that have an empty or unparseable cell in one of the
/// selected columns.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingPolicy {
    /// Fail on the first bad cell.
    #[default]
    Strict,
    /// Drop the row and report it.
    Lenient,
}

/// Which CSV columns make up a [`Dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub dependent: String,
    pub explanatory: Vec<String>,
    #[serde(default)]
    pub coords: Option<(String, String)>,
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default)]
    pub missing: MissingPolicy,
}

impl ColumnSpec {
    pub fn new(dependent: impl Into<String>, explanatory: Vec<String>) -> Self {
        Self {
            dependent: dependent.into(),
            explanatory,
            coords: None,
            id: None,
            missing: MissingPolicy::Strict,
        }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = Some(id.into());
        self
    }

    pub fn with_coords(mut self, x: impl Into<String>, y: impl Into<String>) -> Self {
        self.coords = Some((x.into(), y.into()));
        self
    }

    pub fn lenient(mut self) -> Self {
        self.missing = MissingPolicy::Lenient;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TransformKind {
    Log,
    Zscore { mean: f64, sd: f64 },
}

/// A transform applied to one column after loading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformRecord {
    pub column: String,
    #[serde(flatten)]
    pub kind: TransformKind,
}

/// Selects the dependent vector or one explanatory column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Column {
    Dependent,
    Explanatory(usize),
}

/// An ingested problem instance.
///
/// `y` and `x` are finite, `n ≥ 2`, `p ≥ 1` and ids are unique; the
/// constructor enforces all of it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: DVector<f64>,
    x: DMatrix<f64>,
    coords: Option<DMatrix<f64>>,
    ids: Vec<String>,
    dependent_name: String,
    column_names: Vec<String>,
    coord_names: Option<(String, String)>,
    transforms: Vec<TransformRecord>,
}

impl Dataset {
    pub fn new(
        y: DVector<f64>,
        x: DMatrix<f64>,
        ids: Vec<String>,
        dependent_name: impl Into<String>,
        column_names: Vec<String>,
    ) -> Result<Self> {
        let n = y.len();
        if n < 2 {
            return Err(Error::TooFewRows(n));
        }
        if x.nrows() != n {
            return Err(Error::DimensionMismatch(format!("y has {n} rows, X has {}", x.nrows())));
        }
        if x.ncols() == 0 {
            return Err(Error::InvalidConfig("at least one explanatory column is required".into()));
        }
        if column_names.len() != x.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} column names for {} columns",
                column_names.len(),
                x.ncols()
            )));
        }
        if ids.len() != n {
            return Err(Error::DimensionMismatch(format!("{} ids for {n} rows", ids.len())));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dependent variable"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("explanatory variables"));
        }
        let mut seen = HashSet::with_capacity(n);
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(Self {
            y,
            x,
            coords: None,
            ids,
            dependent_name: dependent_name.into(),
            column_names,
            coord_names: None,
            transforms: Vec::new(),
        })
    }

    /// Ids `"1"..="n"`, column names `x1..xp`.
    pub fn from_arrays(y: DVector<f64>, x: DMatrix<f64>) -> Result<Self> {
        let ids = (1..=y.len()).map(|i| i.to_string()).collect();
        let names = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
        Self::new(y, x, ids, "y", names)
    }

    pub fn with_coords(mut self, coords: DMatrix<f64>, names: (String, String)) -> Result<Self> {
        if coords.nrows() != self.n() || coords.ncols() != 2 {
            return Err(Error::DimensionMismatch(format!(
                "coords must be {}x2, got {}x{}",
                self.n(),
                coords.nrows(),
                coords.ncols()
            )));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("coordinates"));
        }
        self.coords = Some(coords);
        self.coord_names = Some(names);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn coords(&self) -> Option<&DMatrix<f64>> {
        self.coords.as_ref()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn dependent_name(&self) -> &str {
        &self.dependent_name
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn coord_names(&self) -> Option<&(String, String)> {
        self.coord_names.as_ref()
    }

    pub fn transforms(&self) -> &[TransformRecord] {
        &self.transforms
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|s| s == id)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|s| s == name)
    }

    /// Rows `rows` (in that order) as a new dataset.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.n()) {
            return Err(Error::IndexOutOfRange(format!("row {bad} of {}", self.n())));
        }
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&r| self.y[r]));
        let x = self.x.select_rows(rows);
        let ids = rows.iter().map(|&r| self.ids[r].clone()).collect();
        let mut out = Self::new(y, x, ids, self.dependent_name.clone(), self.column_names.clone())?;
        if let (Some(c), Some(names)) = (&self.coords, &self.coord_names) {
            out = out.with_coords(c.select_rows(rows), names.clone())?;
        }
        out.transforms = self.transforms.clone();
        Ok(out)
    }

    fn column_name(&self, column: Column) -> Result<String> {
        match column {
            Column::Dependent => Ok(self.dependent_name.clone()),
            Column::Explanatory(j) => self
                .column_names
                .get(j)
                .cloned()
                .ok_or_else(|| Error::IndexOutOfRange(format!("explanatory column {j} of {}", self.p()))),
        }
    }

    /// Replaces a column by its natural logarithm.
    pub fn log_transform(&self, column: Column) -> Result<Self> {
        let name = self.column_name(column)?;
        let values: Vec<f64> = match column {
            Column::Dependent => self.y.iter().copied().collect(),
            Column::Explanatory(j) => self.x.column(j).iter().copied().collect(),
        };
        if let Some((i, &v)) = values.iter().enumerate().find(|(_, &v)| v <= 0.0) {
            return Err(Error::NonPositive {
                id: self.ids[i].clone(),
                value: v,
            });
        }
        let mut out = self.clone();
        match column {
            Column::Dependent => out.y.apply(|v| *v = v.ln()),
            Column::Explanatory(j) => out.x.column_mut(j).apply(|v| *v = v.ln()),
        }
        out.transforms.push(TransformRecord {
            column: name,
            kind: TransformKind::Log,
        });
        Ok(out)
    }

    /// Standardizes an explanatory column to zero mean, unit (population)
    /// standard deviation. Off unless asked for.
    pub fn zscore(&self, j: usize) -> Result<Self> {
        let name = self.column_name(Column::Explanatory(j))?;
        let col = self.x.column(j);
        let n = col.len() as f64;
        let mean = col.sum() / n;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        if sd == 0.0 {
            return Err(Error::InvalidConfig(format!("column `{name}` is constant; cannot standardize")));
        }
        let mut out = self.clone();
        out.x.column_mut(j).apply(|v| *v = (*v - mean) / sd);
        out.transforms.push(TransformRecord {
            column: name,
            kind: TransformKind::Zscore { mean, sd },
        });
        Ok(out)
    }

    /// Writes `id, <dependent>, <explanatory...>[, <coord x>, <coord y>]`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        let mut header = vec!["id".to_string(), self.dependent_name.clone()];
        header.extend(self.column_names.iter().cloned());
        if let Some((cx, cy)) = &self.coord_names {
            header.push(cx.clone());
            header.push(cy.clone());
        }
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec = vec![self.ids[i].clone(), self.y[i].to_string()];
            rec.extend(self.x.row(i).iter().map(|v| v.to_string()));
            if let Some(c) = &self.coords {
                rec.push(c[(i, 0)].to_string());
                rec.push(c[(i, 1)].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// The column spec that reloads what [`Dataset::write_csv`] writes.
    pub fn written_spec(&self) -> ColumnSpec {
        ColumnSpec {
            dependent: self.dependent_name.clone(),
            explanatory: self.column_names.clone(),
            coords: self.coord_names.clone(),
            id: Some("id".into()),
            missing: MissingPolicy::Strict,
        }
    }
}

/// Rows dropped by a lenient load, as 1-based data-row numbers.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub dropped_rows: Vec<usize>,
}

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "NA" | "na" | "NaN" | "nan" | "null" | "NULL")
}

/// Reads a comma-delimited CSV with a header row.
pub fn load_csv(path: impl AsRef<Path>, spec: &ColumnSpec) -> Result<(Dataset, LoadReport)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    load_csv_from_reader(file, spec)
}

/// [`load_csv`] over any byte source.
pub fn load_csv_from_reader(source: impl Read, spec: &ColumnSpec) -> Result<(Dataset, LoadReport)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(source);
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let dep_col = find(&spec.dependent)?;
    let exp_cols = spec.explanatory.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    let coord_cols = match &spec.coords {
        Some((cx, cy)) => Some((find(cx)?, find(cy)?)),
        None => None,
    };
    let id_col = spec.id.as_deref().map(find).transpose()?;
    if spec.explanatory.is_empty() {
        return Err(Error::InvalidConfig("no explanatory columns selected".into()));
    }

    let p = exp_cols.len();
    let mut ys = Vec::new();
    let mut xs: Vec<f64> = Vec::new();
    let mut cs: Vec<f64> = Vec::new();
    let mut ids = Vec::new();
    let mut report = LoadReport::default();

    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let row = row_idx + 1;
        let mut numeric = Vec::with_capacity(p + 3);
        let mut cols: Vec<(usize, &str)> = vec![(dep_col, spec.dependent.as_str())];
        cols.extend(exp_cols.iter().zip(&spec.explanatory).map(|(&c, n)| (c, n.as_str())));
        if let (Some((cx, cy)), Some((nx, ny))) = (coord_cols, &spec.coords) {
            cols.push((cx, nx.as_str()));
            cols.push((cy, ny.as_str()));
        }
        let mut bad = None;
        for (c, name) in cols {
            let cell = record.get(c).unwrap_or("");
            if is_missing(cell) {
                bad = Some(Error::MissingValue {
                    row,
                    column: name.to_string(),
                });
                break;
            }
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => numeric.push(v),
                _ => {
                    bad = Some(Error::NonNumeric {
                        row,
                        column: name.to_string(),
                        value: cell.to_string(),
                    });
                    break;
                }
            }
        }
        let id = match id_col {
            Some(c) => {
                let cell = record.get(c).unwrap_or("");
                if cell.is_empty() && bad.is_none() {
                    bad = Some(Error::MissingValue {
                        row,
                        column: spec.id.clone().unwrap_or_default(),
                    });
                }
                cell.to_string()
            }
            None => row.to_string(),
        };
        if let Some(err) = bad {
            match spec.missing {
                MissingPolicy::Strict => return Err(err),
                MissingPolicy::Lenient => {
                    report.dropped_rows.push(row);
                    continue;
                }
            }
        }
        ys.push(numeric[0]);
        xs.extend_from_slice(&numeric[1..=p]);
        if coord_cols.is_some() {
            cs.extend_from_slice(&numeric[p + 1..p + 3]);
        }
        ids.push(id);
    }

    let n = ys.len();
    if n < 2 {
        return Err(Error::TooFewRows(n));
    }
    if !report.dropped_rows.is_empty() {
        log::warn!(
            "dropped {} row(s) with missing or non-numeric cells: {:?}",
            report.dropped_rows.len(),
            report.dropped_rows
        );
    }
    let x = DMatrix::from_row_slice(n, p, &xs);
    let mut ds = Dataset::new(DVector::from_vec(ys), x, ids, spec.dependent.clone(), spec.explanatory.clone())?;
    if let Some((nx, ny)) = &spec.coords {
        ds = ds.with_coords(DMatrix::from_row_slice(n, 2, &cs), (nx.clone(), ny.clone()))?;
    }
    Ok((ds, report))
}

/// A train/test partition of a parent dataset.
#[derive(Debug, Clone)]
pub struct SplitDataset {
    pub train: Dataset,
    pub test: Dataset,
    /// Rows of the parent in `train`, ascending.
    pub train_indices: Vec<usize>,
    /// Rows of the parent in `test`, grouped by cluster and ascending within
    /// each cluster.
    pub test_indices: Vec<usize>,
}

/// Holds out `per_cluster` rows from every cluster, drawn uniformly without
/// replacement from a generator seeded with `seed`.
pub fn split_by_cluster(
    d: &Dataset,
    assignment: &ClusterAssignment,
    per_cluster: usize,
    seed: u64,
) -> Result<SplitDataset> {
    if per_cluster == 0 {
        return Err(Error::InvalidConfig("per_cluster must be at least 1".into()));
    }
    if assignment.labels.len() != d.n() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} rows",
            assignment.labels.len(),
            d.n()
        )));
    }
    let members = assignment.members();
    for (c, m) in members.iter().enumerate() {
        if m.len() < per_cluster + 2 {
            return Err(Error::ClusterTooSmall {
                cluster: c,
                size: m.len(),
                needed: per_cluster + 2,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test_indices = Vec::with_capacity(per_cluster * members.len());
    let mut in_test = vec![false; d.n()];
    for m in &members {
        let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, m.len(), per_cluster)
            .into_iter()
            .map(|k| m[k])
            .collect();
        picked.sort_unstable();
        for &r in &picked {
            in_test[r] = true;
        }
        test_indices.extend(picked);
    }
    let train_indices: Vec<usize> = (0..d.n()).filter(|&r| !in_test[r]).collect();
    Ok(SplitDataset {
        train: d.subset(&train_indices)?,
        test: d.subset(&test_indices)?,
        train_indices,
        test_indices,
    })
}
