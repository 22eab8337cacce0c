//! The four block updates of one ADMM sweep.
//!
//! With the splitting `A = W` (where `A` keeps a zero diagonal), the
//! augmented Lagrangian is
//!
//! ```text
//! ½‖y − Wy − Xβ‖² + λ‖A‖₁ + tr Δᵀ(A − W) + ρ/2 ‖A − W‖² + I₊(W)
//! ```
//!
//! and it separates over the rows of `W`: row `i` sees
//! `½(w·y − rᵢ)² + ρ/2 ‖w − vᵢ‖²` with `r = y − Xβ` and `v = A + Δ/ρ`.

use nalgebra::{DMatrix, DVector};

use super::{AdmmProblem, AdmmState, WUpdate};
use crate::numerics::{apply_rank1_inverse, soft_threshold, Rank1Inverse, Side};

/// Right-hand side `r yᵀ + Δ + ρA` of the normal equation
/// `W (y yᵀ + ρ I) = r yᵀ + Δ + ρA`.
pub fn w_update_rhs(state: &AdmmState, problem: &AdmmProblem, rho: f64) -> DMatrix<f64> {
    let r = problem.residual_vector(&state.beta);
    let mut rhs = &state.delta1 + &state.a * rho;
    rhs.ger(1.0, &r, problem.y(), 1.0);
    rhs
}

/// Minimizer of the smooth part of the Lagrangian in `W`, before any
/// nonnegativity handling.
pub fn solve_w_unconstrained(state: &AdmmState, problem: &AdmmProblem, rho: f64) -> DMatrix<f64> {
    let inv = Rank1Inverse::new(problem.y(), rho).expect("rho validated by config");
    apply_rank1_inverse(&inv, &w_update_rhs(state, problem, rho), Side::Right).expect("dimensions checked by problem")
}

/// New `W` for the current `(A, β, Δ)`.
pub fn update_w(state: &AdmmState, problem: &AdmmProblem, rho: f64, mode: WUpdate) -> DMatrix<f64> {
    match mode {
        WUpdate::Projected => solve_w_unconstrained(state, problem, rho).map(|v| v.max(0.0)),
        WUpdate::Exact => update_w_exact(state, problem, rho),
    }
}

fn update_w_exact(state: &AdmmState, problem: &AdmmProblem, rho: f64) -> DMatrix<f64> {
    let n = problem.n();
    let y = problem.y().as_slice();
    let yty = problem.yty();
    let r = problem.residual_vector(&state.beta);
    // Rows of W are columns of the transposes, which are contiguous.
    let v = state.a.zip_map(&state.delta1, |a, d| a + d / rho);
    let mut vt = DMatrix::zeros(n, n);
    transpose_into(&v, &mut vt);
    let mut wt = DMatrix::zeros(n, n);
    let mut scratch = Vec::with_capacity(n);
    for (i, (vi, wi)) in vt.as_slice().chunks_exact(n).zip(wt.as_mut_slice().chunks_exact_mut(n)).enumerate() {
        nonneg_row_solve(vi, y, yty, r[i], rho, wi, &mut scratch);
    }
    let mut w = v;
    transpose_into(&wt, &mut w);
    w
}

/// Cache-blocked `dst = srcᵀ` for square matrices.
fn transpose_into(src: &DMatrix<f64>, dst: &mut DMatrix<f64>) {
    const BLOCK: usize = 32;
    let n = src.nrows();
    let s = src.as_slice();
    let d = dst.as_mut_slice();
    for jb in (0..n).step_by(BLOCK) {
        for ib in (0..n).step_by(BLOCK) {
            for j in jb..(jb + BLOCK).min(n) {
                for i in ib..(ib + BLOCK).min(n) {
                    d[j + i * n] = s[i + j * n];
                }
            }
        }
    }
}

/// Solves `min ½(w·y − r)² + ρ/2 ‖w − v‖²` subject to `w ≥ 0`.
///
/// Stationarity gives `w = [v − (t/ρ) y]₊` with `t = w·y − r`, so `t` is the
/// root of the strictly decreasing, piecewise linear
/// `h(t) = Σⱼ yⱼ [vⱼ − t yⱼ/ρ]₊ − r − t`, whose kinks sit at `τⱼ = ρ vⱼ / yⱼ`.
/// A quickselect over the kinks narrows the bracket around the root; kinks
/// left outside the bracket have a settled active/inactive status and are
/// folded into running sums, so the search costs `O(n)` on average.
fn nonneg_row_solve(v: &[f64], y: &[f64], yty: f64, r: f64, rho: f64, out: &mut [f64], kinks: &mut Vec<(f64, usize)>) {
    let vy: f64 = v.iter().zip(y).map(|(a, b)| a * b).sum();
    let t0 = (vy - r) / (1.0 + yty / rho);
    let step = t0 / rho;
    let mut feasible = true;
    for ((o, &vj), &yj) in out.iter_mut().zip(v).zip(y) {
        *o = vj - step * yj;
        feasible &= *o >= 0.0;
    }
    if feasible {
        return;
    }

    // Pivot at t = 0 first: every zero vⱼ has its kink there, and in the
    // sparse regime that is most of the row.
    let h0 = v.iter().zip(y).map(|(&vj, &yj)| yj * vj.max(0.0)).sum::<f64>() - r;
    if h0 == 0.0 {
        for (o, &vj) in out.iter_mut().zip(v) {
            *o = vj.max(0.0);
        }
        return;
    }
    let above = h0 > 0.0;
    // h(t) = s1 − t·s2 + (terms of kinks still inside the bracket)
    let (mut s1, mut s2) = (-r, 1.0);
    kinks.clear();
    for (j, (&vj, &yj)) in v.iter().zip(y).enumerate() {
        // the kink ρ vⱼ / yⱼ lies on the settled side of 0 (always when yⱼ = 0)
        let vy = vj * yj;
        let settled = if above { vy <= 0.0 } else { vy >= 0.0 };
        if settled {
            let active = (((yj < 0.0) == above) && yj != 0.0) as u8 as f64;
            s1 += active * vy;
            s2 += active * yj * yj / rho;
        } else {
            kinks.push((rho * vj / yj, j));
        }
    }
    let mut lo = 0;
    let mut hi = kinks.len();
    let mut settled = None;
    while lo < hi {
        let cand = &mut kinks[lo..hi];
        let mid = cand.len() / 2;
        cand.select_nth_unstable_by(mid, |a, b| a.0.total_cmp(&b.0));
        let tp = cand[mid].0;
        let mut h = s1 - tp * s2;
        for &(_, j) in cand.iter() {
            let u = v[j] - tp / rho * y[j];
            if u > 0.0 {
                h += y[j] * u;
            }
        }
        if h > 0.0 {
            // root above tp: kinks at or below tp are active iff yⱼ < 0
            for &(_, j) in &cand[..=mid] {
                if y[j] < 0.0 {
                    s1 += y[j] * v[j];
                    s2 += y[j] * y[j] / rho;
                }
            }
            lo += mid + 1;
        } else if h < 0.0 {
            // root below tp: kinks at or above tp are active iff yⱼ > 0
            for &(_, j) in &cand[mid..] {
                if y[j] > 0.0 {
                    s1 += y[j] * v[j];
                    s2 += y[j] * y[j] / rho;
                }
            }
            hi = lo + mid;
        } else {
            settled = Some(tp);
            break;
        }
    }
    let t = settled.unwrap_or(s1 / s2);
    for ((o, &vj), &yj) in out.iter_mut().zip(v).zip(y) {
        *o = (vj - t / rho * yj).max(0.0);
    }
}

/// `A = C − diag(C)` with `C = S_{λ/ρ}(W − Δ/ρ)`.
pub fn update_a(w: &DMatrix<f64>, delta1: &DMatrix<f64>, lambda1: f64, rho: f64) -> DMatrix<f64> {
    let thr = lambda1 / rho;
    let mut a = w.zip_map(delta1, |wv, d| soft_threshold(wv - d / rho, thr));
    a.fill_diagonal(0.0);
    a
}

/// `β = (XᵀX)⁻¹ Xᵀ(y − Wy)` through the cached factor.
pub fn update_beta(w: &DMatrix<f64>, problem: &AdmmProblem) -> DVector<f64> {
    let target = problem.y() - w * problem.y();
    problem.solve_beta(&target)
}

/// `Δ + ρ(A − W)`.
pub fn update_dual(delta1: &DMatrix<f64>, a: &DMatrix<f64>, w: &DMatrix<f64>, rho: f64) -> DMatrix<f64> {
    delta1 + (a - w) * rho
}

/// The updates exactly as printed in the source derivation: inverse applied
/// on the left, `C = S(W + Δ/ρ)`, `Δ + ρ(W − A)`. The W and A/Δ sign
/// conventions disagree, so this variant is not expected to converge in
/// general; it exists for side-by-side comparison.
pub mod literal {
    use super::*;

    pub fn update_w(state: &AdmmState, problem: &AdmmProblem, rho: f64) -> DMatrix<f64> {
        let r = problem.residual_vector(&state.beta);
        let mut rhs = &state.delta1 + &state.a * rho;
        for i in 0..rhs.nrows() {
            rhs[(i, i)] = rho * state.a[(i, i)] * 2.0;
        }
        rhs.ger(1.0, &r, problem.y(), 1.0);
        let inv = Rank1Inverse::new(problem.y(), rho).expect("rho validated by config");
        apply_rank1_inverse(&inv, &rhs, Side::Left)
            .expect("dimensions checked by problem")
            .map(|v| v.max(0.0))
    }

    pub fn update_a(w: &DMatrix<f64>, delta1: &DMatrix<f64>, lambda1: f64, rho: f64) -> DMatrix<f64> {
        let thr = lambda1 / rho;
        let mut a = w.zip_map(delta1, |wv, d| soft_threshold(wv + d / rho, thr));
        a.fill_diagonal(0.0);
        a
    }

    pub fn update_dual(delta1: &DMatrix<f64>, a: &DMatrix<f64>, w: &DMatrix<f64>, rho: f64) -> DMatrix<f64> {
        delta1 + (w - a) * rho
    }
}
