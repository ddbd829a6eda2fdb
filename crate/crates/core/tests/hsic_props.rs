//! Property tests for the linear algebra and dependence estimators.

use proptest::prelude::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use infoplane_core::hsic::{compute_gram, hsic_empirical, nhsic_empirical, KernelSpec};
use infoplane_core::linalg::{center_gram, solve_regularized, trace_product, Matrix};

fn symmetric_matrix(m: usize, values: &[f64]) -> Matrix {
    let mut k = Matrix::zeros(m, m);
    let mut idx = 0;
    for i in 0..m {
        for j in i..m {
            let v = values[idx % values.len()];
            idx += 1;
            k.set(i, j, v);
            k.set(j, i, v);
        }
    }
    k
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn center_gram_is_idempotent(
        m in 2usize..10,
        values in prop::collection::vec(-5.0f64..5.0, 64),
    ) {
        let k = symmetric_matrix(m, &values);
        let once = center_gram(&k).unwrap();
        let twice = center_gram(&once).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn trace_product_commutes(
        m in 2usize..8,
        n in 2usize..8,
        values in prop::collection::vec(-3.0f64..3.0, 128),
    ) {
        let a = Matrix::from_vec(m, n, values.iter().cycle().take(m * n).copied().collect()).unwrap();
        let b = Matrix::from_vec(n, m, values.iter().rev().cycle().take(m * n).copied().collect()).unwrap();
        let ab = trace_product(&a, &b).unwrap();
        let ba = trace_product(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-9);
    }

    #[test]
    fn hsic_is_symmetric_and_nonnegative_on_psd(
        m in 2usize..8,
        seed in 0u64..1000,
    ) {
        // PSD Gram matrices from actual kernel evaluations.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pa: Vec<f64> = (0..m * 2).map(|_| rng.random_range(-2.0..2.0)).collect();
        let pb: Vec<f64> = (0..m * 2).map(|_| rng.random_range(-2.0..2.0)).collect();
        let k = compute_gram(&Matrix::from_vec(m, 2, pa).unwrap(), &KernelSpec::rbf_fixed(1.0)).unwrap();
        let l = compute_gram(&Matrix::from_vec(m, 2, pb).unwrap(), &KernelSpec::rbf_fixed(1.5)).unwrap();
        let kl = hsic_empirical(&k, &l).unwrap().value;
        let lk = hsic_empirical(&l, &k).unwrap().value;
        prop_assert!((kl - lk).abs() < 1e-10);
        prop_assert!(kl >= -1e-12);
    }

    #[test]
    fn rbf_gram_is_shift_invariant(
        m in 2usize..8,
        shift in -10.0f64..10.0,
        seed in 0u64..1000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<f64> = (0..m * 3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let shifted: Vec<f64> = points.iter().map(|v| v + shift).collect();
        let g1 = compute_gram(&Matrix::from_vec(m, 3, points).unwrap(), &KernelSpec::rbf_fixed(1.0)).unwrap();
        let g2 = compute_gram(&Matrix::from_vec(m, 3, shifted).unwrap(), &KernelSpec::rbf_fixed(1.0)).unwrap();
        for (a, b) in g1.data().iter().zip(g2.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn solve_residual_bound_on_random_spd_plus_noise() {
    // 100 random instances up to m = 64: relative residual below 1e-8.
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for trial in 0..100 {
        let m = rng.random_range(2..=64);
        let mut g = Matrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                g.set(i, j, rng.random_range(-1.0..1.0));
            }
        }
        // SPD part G G^T plus a nonsymmetric perturbation.
        let mut a = g.matmul(&g.transpose()).unwrap();
        for i in 0..m {
            for j in 0..m {
                let v = a.get(i, j) + 0.1 * rng.random_range(-1.0..1.0);
                a.set(i, j, v);
            }
        }
        let mut b = Matrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                b.set(i, j, rng.random_range(-1.0..1.0));
            }
        }
        let ridge = 10f64.powf(rng.random_range(-5.0..-1.0));
        let x = solve_regularized(&a, &b, ridge).unwrap();

        // Residual of the shifted system.
        let mut shifted = a.clone();
        for i in 0..m {
            shifted.set(i, i, shifted.get(i, i) + ridge * m as f64);
        }
        let ax = shifted.matmul(&x).unwrap();
        let mut residual = 0.0f64;
        for (r, want) in ax.data().iter().zip(b.data()) {
            residual += (r - want) * (r - want);
        }
        let rel = residual.sqrt() / b.frobenius_norm();
        assert!(rel < 1e-8, "trial {trial}: m={m} relative residual {rel:.3e}");
    }
}

#[test]
fn large_sample_independence_scores_near_zero() {
    // 5000 samples of independent scalar X and binary one-hot Y: the biased
    // estimator should be well below 0.01.
    let m = 5000;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let xs: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut ys = vec![0.0f64; m * 2];
    for i in 0..m {
        let k = rng.random_range(0..2usize);
        ys[i * 2 + k] = 1.0;
    }
    let kx = compute_gram(&Matrix::from_vec(m, 1, xs).unwrap(), &KernelSpec::rbf_fixed(1.0)).unwrap();
    let ky = compute_gram(&Matrix::from_vec(m, 2, ys).unwrap(), &KernelSpec::Linear).unwrap();
    let est = hsic_empirical(&kx, &ky).unwrap();
    assert!(est.value.abs() < 0.01, "got {}", est.value);
    assert!(est.value >= -1e-12);
}

#[test]
fn nhsic_orders_self_above_cross_dependence() {
    // The finite-sample normalized estimator is biased (both values sit well
    // above zero at small m), so only the ordering is asserted: a variable
    // depends on itself more than on an independent draw.
    let m = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let xs: Vec<f64> = (0..m * 2).map(|_| rng.random_range(-2.0..2.0)).collect();
    let k = compute_gram(&Matrix::from_vec(m, 2, xs).unwrap(), &KernelSpec::rbf_fixed(1.0)).unwrap();
    let same = nhsic_empirical(&k, &k, 1e-5).unwrap().value;
    let other: Vec<f64> = (0..m * 2).map(|_| rng.random_range(-2.0..2.0)).collect();
    let l = compute_gram(&Matrix::from_vec(m, 2, other).unwrap(), &KernelSpec::rbf_fixed(1.0)).unwrap();
    let cross = nhsic_empirical(&k, &l, 1e-5).unwrap().value;
    assert!(same > cross, "same {same} vs cross {cross}");
    assert!(same.is_finite() && cross.is_finite());
}
