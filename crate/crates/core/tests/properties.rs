use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sarlearn::admm::{fit_admm, AdmmConfig};
use sarlearn::clustering::{adjusted_rand_index, cluster_w};
use sarlearn::dataset::{load_csv, Dataset};
use sarlearn::numerics::{apply_rank1_inverse, sym_eig, Rank1Inverse, Side};
use sarlearn::ols::fit_ols;
use sarlearn::spillover::{Edit, SpilloverSolver};
use sarlearn::synth::{generate_dataset, generate_w, oracle_solve, SynthSpec};

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn csv_round_trip_is_bit_exact(seed in any::<u64>(), n in 2usize..20, p in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1e6..1e6) * rng.random::<f64>());
        let y = DVector::from_fn(n, |_, _| rng.random::<f64>() / 3.0);
        let d = Dataset::from_arrays(y, x).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        d.write_csv(&path).unwrap();
        let (back, report) = load_csv(&path, &d.written_spec()).unwrap();
        prop_assert_eq!(back.y(), d.y());
        prop_assert_eq!(back.x(), d.x());
        prop_assert_eq!(back.ids(), d.ids());
        prop_assert!(report.dropped_rows.is_empty());
    }

    #[test]
    fn rank1_inverse_matches_dense_solve(seed in any::<u64>(), n in 1usize..50, rho in 0.05f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        let m = random_matrix(&mut rng, n, n);
        let inv = Rank1Inverse::new(&y, rho).unwrap();
        let dense = inv.forward_dense().try_inverse().unwrap();
        let right = apply_rank1_inverse(&inv, &m, Side::Right).unwrap();
        let left = apply_rank1_inverse(&inv, &m, Side::Left).unwrap();
        prop_assert!((right - &m * &dense).amax() <= 1e-10);
        prop_assert!((left - &dense * &m).amax() <= 1e-10);
    }

    #[test]
    fn symmetric_eigenvalues_sum_to_trace(seed in any::<u64>(), n in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_matrix(&mut rng, n, n);
        let s = (&a + a.transpose()) * 0.5;
        let eig = sym_eig(&s).unwrap();
        let trace = s.trace();
        prop_assert!((eig.values.sum() - trace).abs() <= 1e-8 * trace.abs().max(1.0));
    }

    #[test]
    fn ols_residuals_are_orthogonal_to_columns(seed in any::<u64>(), n in 5usize..60, p in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_matrix(&mut rng, n.max(p + 1), p);
        let y = DVector::from_fn(x.nrows(), |_, _| rng.random_range(-5.0..5.0));
        let fit = fit_ols(&x, &y).unwrap();
        let r = DVector::from_column_slice(&fit.residuals);
        prop_assert!((x.tr_mul(&r)).amax() <= 1e-8 * x.norm() * y.norm());
    }

    #[test]
    fn fitted_w_is_feasible(seed in any::<u64>(), n in 3usize..12, lambda in 0.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_matrix(&mut rng, n, 2);
        let y = DVector::from_fn(n, |_, _| rng.random_range(-1.0..2.0));
        let fit = fit_admm(&y, &x, &AdmmConfig { lambda1: lambda, max_iter: 2000, ..AdmmConfig::default() }).unwrap();
        prop_assert!((0..n).all(|i| fit.w[(i, i)] == 0.0));
        prop_assert!(fit.w.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn spillover_is_linear_in_edits(seed in any::<u64>(), n in 3usize..15) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = DMatrix::from_fn(n, n, |i, j| if i != j && rng.random_bool(0.3) { rng.random_range(0.0..0.2) } else { 0.0 });
        let beta = DVector::from_vec(vec![1.0, -2.0]);
        let x = random_matrix(&mut rng, n, 2);
        let solver = SpilloverSolver::new(&w, &beta).unwrap();
        let (a, b) = (0, n - 1);
        let ea = Edit { row: a, column: 0, value: x[(a, 0)] + 1.5 };
        let eb = Edit { row: b, column: 1, value: x[(b, 1)] - 0.5 };
        let da = solver.scenario(&x, &[ea]).unwrap().delta;
        let db = solver.scenario(&x, &[eb]).unwrap().delta;
        let both = solver.scenario(&x, &[ea, eb]).unwrap().delta;
        for i in 0..n {
            prop_assert!((both[i] - da[i] - db[i]).abs() <= 1e-9);
        }
    }

    #[test]
    fn clustering_is_permutation_equivariant(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes = [4usize, 6, 5];
        let labels: Vec<usize> = sizes.iter().enumerate().flat_map(|(b, &s)| std::iter::repeat_n(b, s)).collect();
        let n = labels.len();
        let w = DMatrix::from_fn(n, n, |i, j| if i != j && labels[i] == labels[j] { rng.random_range(0.5..1.5) } else { 0.0 });
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let wp = DMatrix::from_fn(n, n, |i, j| w[(perm[i], perm[j])]);
        let (_, a) = cluster_w(&w, None, 42).unwrap();
        let (_, b) = cluster_w(&wp, None, 42).unwrap();
        let unpermuted: Vec<usize> = (0..n).map(|i| b.labels[perm.iter().position(|&p| p == i).unwrap()]).collect();
        prop_assert_eq!(adjusted_rand_index(&a.labels, &unpermuted), 1.0);
    }
}

#[test]
fn seeded_generation_is_bit_reproducible() {
    let spec = SynthSpec { n: 40, p: 3, density: 0.1, seed: 17, ..SynthSpec::default() };
    let w1 = generate_w(&spec).unwrap();
    let w2 = generate_w(&spec).unwrap();
    assert_eq!(w1, w2);
    let beta = DVector::from_vec(vec![1.0, 0.5, -0.25]);
    let d1 = generate_dataset(&w1, &beta, &spec).unwrap();
    let d2 = generate_dataset(&w2, &beta, &spec).unwrap();
    assert_eq!(d1.y(), d2.y());
    assert_eq!(d1.x(), d2.x());
}

#[test]
fn admm_is_deterministic() {
    let spec = SynthSpec { n: 25, p: 2, density: 0.15, seed: 3, ..SynthSpec::default() };
    let w = generate_w(&spec).unwrap();
    let d = generate_dataset(&w, &DVector::from_vec(vec![1.0, -1.0]), &spec).unwrap();
    let config = AdmmConfig { lambda1: 0.2, adaptive_rho: true, ..AdmmConfig::default() };
    let a = fit_admm(d.y(), d.x(), &config).unwrap();
    let b = fit_admm(d.y(), d.x(), &config).unwrap();
    assert_eq!(a.w, b.w);
    assert_eq!(a.beta, b.beta);
    assert_eq!(a.iterations, b.iterations);
}

#[test]
fn oracle_and_admm_agree_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..10 {
        let n = rng.random_range(4..=8);
        let x = random_matrix(&mut rng, n, 2);
        let y = DVector::from_fn(n, |_, _| rng.random_range(0.5..2.0));
        let lambda = rng.random_range(0.05..2.0);
        let fit = fit_admm(&y, &x, &AdmmConfig { lambda1: lambda, eps_abs: 1e-9, eps_rel: 1e-8, max_iter: 50_000, ..AdmmConfig::default() }).unwrap();
        let oracle = oracle_solve(&y, &x, lambda, 200_000, None).unwrap();
        assert!((fit.objective - oracle.objective).abs() / (1.0 + oracle.objective.abs()) <= 1e-3);
    }
}
