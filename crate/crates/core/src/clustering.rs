//! Spectral clustering of a learnt contiguity matrix into submarkets.

use std::fs::File;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::numerics::sym_eig;
use crate::{Error, Result};

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_K_MAX: usize = 10;
pub const DEFAULT_RESTARTS: usize = 20;
const GAP_DELTA: f64 = 1e-12;
const FLAT_GAP: f64 = 1e-9;
const LLOYD_MAX_ITER: usize = 300;

#[derive(Debug, Clone, Serialize)]
pub struct SpectralEmbedding {
    pub k: usize,
    /// Every eigenvalue of `(W + Wᵀ)/2`, descending.
    pub eigenvalues: Vec<f64>,
    /// `n × k`: the leading `k` eigenvectors as columns.
    #[serde(skip)]
    pub coords: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub k: usize,
    pub inertia: f64,
    pub seed: u64,
}

impl ClusterAssignment {
    /// Row indices of each cluster, in label order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.members().iter().map(Vec::len).collect()
    }
}

/// Dimension at the largest relative eigen-gap `(λᵢ − λᵢ₊₁)/(|λᵢ₊₁| + δ)`
/// among the first `k_max` eigenvalues. Falls back to 1 on a flat spectrum.
pub fn select_k(eigenvalues: &[f64], k_max: usize) -> usize {
    let upper = k_max.min(eigenvalues.len());
    let mut best = (1, f64::NEG_INFINITY);
    for i in 1..upper {
        let (hi, lo) = (eigenvalues[i - 1], eigenvalues[i]);
        let gap = (hi - lo) / (lo.abs() + GAP_DELTA);
        if gap > best.1 {
            best = (i, gap);
        }
    }
    if !(best.1 > FLAT_GAP) {
        log::warn!("eigenvalue spectrum has no gap; using a single cluster dimension");
        return 1;
    }
    best.0
}

/// Eigendecomposition of `(W + Wᵀ)/2`, truncated to `k` leading vectors
/// (chosen by [`select_k`] unless `k_override` is given).
pub fn spectral_embed(w: &DMatrix<f64>, k_override: Option<usize>) -> Result<SpectralEmbedding> {
    if !w.is_square() {
        return Err(Error::DimensionMismatch(format!("W must be square, got {:?}", w.shape())));
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("W"));
    }
    let n = w.nrows();
    let sym = (w + w.transpose()) * 0.5;
    let eig = sym_eig(&sym)?;
    let eigenvalues: Vec<f64> = eig.values.iter().copied().collect();
    let k = match k_override {
        Some(k) if k == 0 || k > n => {
            return Err(Error::InvalidConfig(format!("cluster count {k} must be in 1..={n}")));
        }
        Some(k) => k,
        None => select_k(&eigenvalues, DEFAULT_K_MAX),
    };
    Ok(SpectralEmbedding {
        k,
        coords: eig.vectors.columns(0, k).into_owned(),
        eigenvalues,
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(point, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plusplus_seeds(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(dist) => dist.sample(rng),
            // every point coincides with a center already
            Err(_) => rng.random_range(0..n),
        };
        centers.push(points[next].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }
    centers
}

fn lloyd(points: &[Vec<f64>], mut centers: Vec<Vec<f64>>) -> (Vec<usize>, f64) {
    let (n, k) = (points.len(), centers.len());
    let dim = points[0].len();
    let mut labels = vec![usize::MAX; n];
    for _ in 0..LLOYD_MAX_ITER {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (c, _) = nearest(p, &centers);
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
        }
        let mut counts = vec![0usize; k];
        let mut sums = vec![vec![0.0; dim]; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        // Reseed empty clusters from the point farthest from its center.
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| counts[labels[i]] > 1)
                .max_by(|&a, &b| {
                    sq_dist(&points[a], &centers[labels[a]]).total_cmp(&sq_dist(&points[b], &centers[labels[b]])).then(b.cmp(&a))
                });
            if let Some(i) = far {
                let old = labels[i];
                counts[old] -= 1;
                for (s, v) in sums[old].iter_mut().zip(&points[i]) {
                    *s -= v;
                }
                labels[i] = c;
                counts[c] = 1;
                sums[c] = points[i].clone();
                changed = true;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = points.iter().zip(&labels).map(|(p, &l)| sq_dist(p, &centers[l])).sum();
    (labels, inertia)
}

/// Renumbers labels in order of first appearance so equal partitions get
/// equal label vectors.
fn canonical_labels(labels: &[usize], k: usize) -> Vec<usize> {
    let mut map = vec![usize::MAX; k];
    let mut next = 0;
    labels
        .iter()
        .map(|&l| {
            if map[l] == usize::MAX {
                map[l] = next;
                next += 1;
            }
            map[l]
        })
        .collect()
}

/// K-means on the rows of `coords`: k-means++ seeding, Lloyd iterations,
/// best of `restarts` by inertia. Restart `r` uses seed `seed + r`.
pub fn kmeans(coords: &DMatrix<f64>, k: usize, seed: u64, restarts: usize) -> Result<ClusterAssignment> {
    let n = coords.nrows();
    if k == 0 || k > n {
        return Err(Error::InvalidConfig(format!("k = {k} must be in 1..={n}")));
    }
    if coords.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("embedding coordinates"));
    }
    let points: Vec<Vec<f64>> = coords.row_iter().map(|r| r.iter().copied().collect()).collect();
    let best = (0..restarts.max(1) as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(r));
            let centers = plusplus_seeds(&points, k, &mut rng);
            lloyd(&points, centers)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("at least one restart");
    Ok(ClusterAssignment {
        labels: canonical_labels(&best.0, k),
        k,
        inertia: best.1,
        seed,
    })
}

/// Spectral embedding followed by K-means with `k` equal to the embedding
/// dimension.
pub fn cluster_w(w: &DMatrix<f64>, k_override: Option<usize>, seed: u64) -> Result<(SpectralEmbedding, ClusterAssignment)> {
    let emb = spectral_embed(w, k_override)?;
    let assignment = kmeans(&emb.coords, emb.k, seed, DEFAULT_RESTARTS)?;
    Ok((emb, assignment))
}

/// Adjusted Rand index between two labelings of the same points.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "adjusted_rand_index: length mismatch");
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = DMatrix::<f64>::zeros(ka, kb);
    for (&x, &y) in a.iter().zip(b) {
        table[(x, y)] += 1.0;
    }
    let c2 = |v: f64| v * (v - 1.0) / 2.0;
    let sum_cells: f64 = table.iter().map(|&v| c2(v)).sum();
    let sum_rows: f64 = table.row_iter().map(|r| c2(r.sum())).sum();
    let sum_cols: f64 = table.column_iter().map(|c| c2(c.sum())).sum();
    let total = c2(n as f64);
    let expected = sum_rows * sum_cols / total;
    let max = 0.5 * (sum_rows + sum_cols);
    if max == expected {
        return 1.0;
    }
    (sum_cells - expected) / (max - expected)
}

/// Writes `id,label,e1..ek`.
pub fn write_clusters_csv(path: impl AsRef<Path>, ids: &[String], assignment: &ClusterAssignment, emb: &SpectralEmbedding) -> Result<()> {
    let path = path.as_ref();
    if ids.len() != assignment.labels.len() || emb.coords.nrows() != ids.len() {
        return Err(Error::DimensionMismatch("ids, labels and embedding differ in length".into()));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((1..=emb.k).map(|c| format!("e{c}")));
    w.write_record(&header)?;
    for (i, id) in ids.iter().enumerate() {
        let mut rec = vec![id.clone(), assignment.labels[i].to_string()];
        rec.extend(emb.coords.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads the `id` and `label` columns of a clusters file, ordered like `ids`.
/// Every id must appear exactly once. The inertia of a loaded assignment is
/// unknown and reported as NaN.
pub fn read_cluster_labels(path: impl AsRef<Path>, ids: &[String], seed: u64) -> Result<ClusterAssignment> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| Error::MissingColumn(name.into()));
    let (id_col, label_col) = (col("id")?, col("label")?);
    let index: std::collections::HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut labels = vec![None; ids.len()];
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let id = &rec[id_col];
        let &i = index.get(id).ok_or_else(|| Error::UnknownId(id.into()))?;
        let raw = &rec[label_col];
        let label: usize = raw.trim().parse().map_err(|_| Error::NonNumeric { row: row + 1, column: "label".into(), value: raw.into() })?;
        if labels[i].replace(label).is_some() {
            return Err(Error::DuplicateId(id.into()));
        }
    }
    let labels: Vec<usize> = labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| l.ok_or_else(|| Error::MissingValue { row: i + 1, column: format!("label for `{}`", ids[i]) }))
        .collect::<Result<_>>()?;
    let k = labels.iter().max().map_or(0, |m| m + 1);
    if (0..k).any(|c| !labels.contains(&c)) {
        return Err(Error::InvalidConfig("cluster labels must be 0..k without gaps".into()));
    }
    Ok(ClusterAssignment { labels, k, inertia: f64::NAN, seed })
}

/// Centroid of each cluster in the embedding, `k × dim`.
pub fn centroids(coords: &DMatrix<f64>, assignment: &ClusterAssignment) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(assignment.k, coords.ncols());
    for (c, members) in assignment.members().iter().enumerate() {
        let mut s = DVector::zeros(coords.ncols());
        for &i in members {
            s += coords.row(i).transpose();
        }
        out.set_row(c, &(s / members.len().max(1) as f64).transpose());
    }
    out
}
