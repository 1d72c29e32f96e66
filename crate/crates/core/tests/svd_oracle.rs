//! Truncated SVD against an eigen-decomposition of the Gram matrix.

use logodet::rng::stream_rng;
use logodet::svd::{compress_fc, compressed_flops, fc_flops, relative_error, svd, RankSpec};
use proptest::prelude::*;
use rand::Rng;

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, 0);
    (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending.
fn jacobi_eigenvalues(mut a: Vec<f64>, n: usize) -> Vec<f64> {
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i * n + j].powi(2)).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i * n + i].max(0.0)).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

fn gram(w: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut g = vec![0.0; cols * cols];
    for i in 0..cols {
        for j in 0..cols {
            g[i * cols + j] = (0..rows).map(|r| w[r * cols + i] * w[r * cols + j]).sum();
        }
    }
    g
}

#[test]
fn rank_three_error_matches_eigen_reference() {
    let (u, v, t) = (8, 6, 3);
    for seed in 0..20 {
        let w = random_matrix(u, v, seed);
        let ev = jacobi_eigenvalues(gram(&w, u, v), v);
        let want = (ev[t..].iter().sum::<f64>() / ev.iter().sum::<f64>()).sqrt();
        let layer = compress_fc(&w, u, v, &vec![0.0; u], t).unwrap();
        let got = relative_error(&w, &layer.reconstruct());
        assert!((got - want).abs() < 1e-6, "seed {seed}: {got} vs {want}");
        let d = svd(&w, u, v).unwrap();
        for (s, l) in d.s.iter().zip(&ev) {
            assert!((s * s - l).abs() < 1e-8 * (1.0 + l), "{s} vs {l}");
        }
    }
}

#[test]
fn wide_matrix_uses_the_smaller_dimension() {
    let (u, v) = (5, 9);
    let w = random_matrix(u, v, 99);
    let d = svd(&w, u, v).unwrap();
    assert_eq!(d.s.len(), 5);
    let ev = jacobi_eigenvalues(gram(&w, u, v), v);
    for (s, l) in d.s.iter().zip(&ev) {
        assert!((s * s - l).abs() < 1e-8 * (1.0 + l));
    }
    assert!(ev[5..].iter().all(|l| l.abs() < 1e-9));
}

#[test]
fn out_of_range_rank_is_rejected() {
    let w = random_matrix(4, 3, 1);
    assert!(compress_fc(&w, 4, 3, &[0.0; 4], 0).is_err());
    assert!(compress_fc(&w, 4, 3, &[0.0; 4], 4).is_err());
}

#[test]
fn flop_counts() {
    assert_eq!(fc_flops(256, 1024), 262_144);
    assert_eq!(compressed_flops(256, 1024, 64), 64 * 1280);
    assert!(RankSpec::RankFraction(0.0).validate().is_err());
    assert!(RankSpec::Energy(1.5).validate().is_err());
    assert!(RankSpec::Absolute(0).validate().is_err());
    assert_eq!(RankSpec::RankFraction(0.25).resolve(&[4.0, 3.0, 2.0, 1.0, 1.0, 1.0, 1.0, 1.0]), 2);
    assert_eq!(RankSpec::Absolute(50).resolve(&[1.0, 1.0]), 2);
    assert_eq!(RankSpec::Energy(0.5).resolve(&[3.0, 2.0, 1.0]), 1);
}

proptest! {
    #[test]
    fn error_non_increasing_in_rank(seed in any::<u64>(), u in 2usize..10, v in 2usize..10) {
        let w = random_matrix(u, v, seed);
        let k = u.min(v);
        let errs: Vec<f64> = (1..=k)
            .map(|t| relative_error(&w, &compress_fc(&w, u, v, &vec![0.0; u], t).unwrap().reconstruct()))
            .collect();
        for pair in errs.windows(2) {
            prop_assert!(pair[1] <= pair[0] + 1e-12, "{:?}", errs);
        }
        prop_assert!(errs[k - 1] < 1e-10);
    }

    #[test]
    fn factored_forward_applies_reconstruction(seed in any::<u64>(), u in 1usize..8, v in 1usize..8) {
        let w = random_matrix(u, v, seed);
        let bias = random_matrix(u, 1, seed ^ 5);
        let x = random_matrix(v, 1, seed ^ 9);
        let k = u.min(v);
        for t in [1, k] {
            let layer = compress_fc(&w, u, v, &bias, t).unwrap();
            let r = layer.reconstruct();
            let y = layer.forward(&x);
            for i in 0..u {
                let want: f64 = (0..v).map(|j| r[i * v + j] * x[j]).sum::<f64>() + bias[i];
                prop_assert!((y[i] - want).abs() < 1e-10);
                if t == k {
                    let dense: f64 = (0..v).map(|j| w[i * v + j] * x[j]).sum::<f64>() + bias[i];
                    prop_assert!((y[i] - dense).abs() < 1e-9);
                }
            }
        }
    }
}
