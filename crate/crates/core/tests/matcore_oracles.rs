//! matcore against independent oracles: Gram-matrix eigenvalues for the
//! spectrum, brute-force perturbation for the prox, and direct algebra for
//! factorizations.

use lorascape::matcore::*;
use lorascape::rng;
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;

/// Singular values from the eigenvalues of `M^T M`, sorted descending.
fn gram_singulars(m: &DMatrix<f64>) -> Vec<f64> {
    let gram = if m.nrows() >= m.ncols() {
        m.transpose() * m
    } else {
        m * m.transpose()
    };
    let mut ev: Vec<f64> = SymmetricEigen::new(gram)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

fn matrix_strategy() -> impl Strategy<Value = DMatrix<f64>> {
    (1usize..7, 1usize..7, any::<u64>()).prop_map(|(m, n, seed)| {
        let mut g = rng::seeded(seed);
        rng::gaussian_matrix(&mut g, m, n)
    })
}

/// Random matrix of prescribed rank.
fn low_rank(seed: u64, m: usize, n: usize, k: usize) -> DMatrix<f64> {
    let mut g = rng::seeded(seed);
    rng::gaussian_matrix(&mut g, m, k) * rng::gaussian_matrix(&mut g, k, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spectrum_matches_gram_eigenvalues(m in matrix_strategy()) {
        let s = singular_values(&m);
        let o = gram_singulars(&m);
        prop_assert_eq!(s.len(), m.nrows().min(m.ncols()));
        for (a, b) in s.iter().zip(&o) {
            prop_assert!((a - b).abs() <= 1e-7 * (1.0 + o[0]));
        }
    }

    #[test]
    fn nuclear_and_spectral_are_dual(m in matrix_strategy(), seed in any::<u64>()) {
        let mut g = rng::seeded(seed);
        let y = rng::gaussian_matrix(&mut g, m.nrows(), m.ncols());
        prop_assert!(m.dot(&y) <= nuclear_norm(&m) * spectral_norm(&y) + 1e-10);
        // Equality at the polar factor.
        let svd = compact_svd(&m, 0.0).unwrap();
        prop_assert!((m.dot(&svd.polar()) - nuclear_norm(&m)).abs() <= 1e-9 * (1.0 + nuclear_norm(&m)));
    }

    #[test]
    fn svt_satisfies_optimality(m in matrix_strategy(), tau in 0.0f64..2.0) {
        let p = svt_prox(&m, tau).unwrap();
        let res = nuclear_subgradient_residual(&p, &(&m - &p), tau).unwrap();
        prop_assert!(res <= 1e-8, "residual {}", res);
        // Closed form on the spectrum.
        let expect: Vec<f64> = gram_singulars(&m).iter().map(|s| (s - tau).max(0.0)).collect();
        for (a, b) in singular_values(&p).iter().zip(&expect) {
            prop_assert!((a - b).abs() <= 1e-7 * (1.0 + expect[0]));
        }
    }

    #[test]
    fn eckart_young_tail(m in matrix_strategy(), k in 0usize..7) {
        let p = project_rank(&m, k).unwrap();
        let tail: f64 = singular_values(&m).iter().skip(k).map(|s| s * s).sum();
        let err = (&m - &p).norm_squared();
        prop_assert!((err - tail).abs() <= 1e-9 * (1.0 + m.norm_squared()));
        prop_assert!(absolute_rank(&p, 1e-10 * (1.0 + m.norm())) <= k);
    }

    #[test]
    fn balanced_factors_reconstruct(seed in any::<u64>(), m in 1usize..7, n in 1usize..7, k in 0usize..4, pad in 0usize..3) {
        let k = k.min(m).min(n);
        let x = if k == 0 { DMatrix::zeros(m, n) } else { low_rank(seed, m, n, k) };
        let f = balanced_factors(&x, k.max(1) + pad).unwrap();
        let scale = 1.0 + x.norm();
        prop_assert!((f.product() - &x).norm() <= 1e-10 * scale);
        prop_assert!(f.balance_residual() <= 1e-10 * scale);
        prop_assert!((f.norm_squared() - 2.0 * nuclear_norm(&x)).abs() <= 1e-9 * scale);
    }

    #[test]
    fn s_matrix_vanishes_on_support_at_stationarity(seed in any::<u64>(), lambda in 0.0f64..1.0) {
        // X = L Σ R^T, grad = −λ L R^T + S with S on the complement.
        let mut g = rng::seeded(seed);
        let q1 = rng::orthonormal_columns(&mut g, 5, 5);
        let q2 = rng::orthonormal_columns(&mut g, 4, 4);
        let l = q1.columns(0, 2).into_owned();
        let r = q2.columns(0, 2).into_owned();
        let x = &l * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 0.5])) * r.transpose();
        let s_true = q1.columns(2, 3) * rng::gaussian_matrix(&mut g, 3, 2) * q2.columns(2, 2).transpose();
        let grad = &s_true - &l * r.transpose() * lambda;
        let (s, align) = s_matrix(&x, &grad, lambda).unwrap();
        prop_assert!(align <= 1e-10);
        prop_assert!((s - s_true).norm() <= 1e-10);
    }
}

#[test]
fn svt_beats_random_perturbations() {
    let mut g = rng::seeded(99);
    for case in 0..10u64 {
        let m = rng::gaussian_matrix(&mut g, 4, 3) * 2.0;
        for tau in [0.0, 0.3, 1.0] {
            let p = svt_prox(&m, tau).unwrap();
            let obj = |y: &DMatrix<f64>| 0.5 * (y - &m).norm_squared() + tau * nuclear_norm(y);
            let best = obj(&p);
            let mut pg = rng::derive(case, tau.to_bits());
            for _ in 0..500 {
                let d = rng::gaussian_matrix(&mut pg, 4, 3) * 0.1;
                assert!(obj(&(&p + d)) >= best - 1e-12);
            }
        }
    }
}

#[test]
fn unit_block_split_reconstructs() {
    let mut g = rng::seeded(5);
    let q1 = rng::orthonormal_columns(&mut g, 6, 6);
    let q2 = rng::orthonormal_columns(&mut g, 5, 5);
    let u = q1.columns(0, 2).into_owned();
    let v = q2.columns(0, 2).into_owned();
    let rest = q1.columns(2, 2) * DMatrix::from_row_slice(2, 2, &[0.7, 0.0, 0.0, 0.2]) * q2.columns(2, 2).transpose();
    let x = &u * v.transpose() + &rest;
    let split = split_unit_block(&x, &u, &v).unwrap();
    assert!((split.reconstruct() - &x).norm() <= 1e-9);
    assert!(split.orthogonality_residual <= 1e-9);
    assert_eq!(split.rest.rank(), 2);
    assert!((split.rest.reconstruct() - rest).norm() <= 1e-9);
}

#[test]
fn rank_overflow_is_reported() {
    let x = low_rank(1, 4, 4, 3);
    assert!(matches!(
        balanced_factors(&x, 2),
        Err(lorascape::Error::RankOverflow { rank: 3, budget: 2 })
    ));
}
