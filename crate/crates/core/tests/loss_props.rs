//! Loss-level properties: sign constraints, rotation invariance, and the
//! variational bound against exact mutual information on enumerable joints.

use proptest::prelude::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use infoplane_core::analysis::variational_mi_lower_bound;
use infoplane_core::label::ClassLabel;
use infoplane_core::linalg::Matrix;
use infoplane_core::losses::{
    cross_entropy, ff_goodness_loss, similarity_matching_loss, supcon_loss,
};
use infoplane_core::tensor::{Tensor, Tensor64};

fn labels_mod(n: usize, c: usize) -> Vec<ClassLabel> {
    (0..n).map(|i| ClassLabel::from_index(i % c, c).unwrap()).collect()
}

fn tensor_from(values: &[f64], rows: usize, cols: usize) -> Tensor64 {
    Tensor::new(
        vec![rows, cols],
        values.iter().cycle().take(rows * cols).copied().collect(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn losses_respect_sign_constraints(
        values in prop::collection::vec(-3.0f64..3.0, 32),
        rows in 2usize..6,
    ) {
        let c = 2;
        let logits = tensor_from(&values, rows, c);
        let ls = labels_mod(rows, c);
        prop_assert!(cross_entropy(&logits, &ls).unwrap().0 >= 0.0);

        let heads = tensor_from(&values, rows, 3);
        // Zero-norm rows cannot be normalized; skip those draws.
        let all_nonzero = (0..rows).all(|i| {
            heads.sample(i).iter().map(|v| v * v).sum::<f64>() > 1e-12
        });
        if all_nonzero && rows >= 4 {
            let even = rows - rows % 2;
            let heads = tensor_from(&values, even, 3);
            let ls = labels_mod(even, 2);
            prop_assert!(supcon_loss(&heads, &ls, 0.5, true).unwrap().0 >= 0.0);
        }

        prop_assert!(similarity_matching_loss(&heads, &ls[..rows].to_vec(), c).unwrap().loss >= 0.0);

        let signs: Vec<bool> = (0..rows).map(|i| i % 2 == 0).collect();
        prop_assert!(ff_goodness_loss(&heads, &signs, 1.5).unwrap().0 > 0.0);
    }
}

#[test]
fn supcon_is_invariant_to_common_rotation() {
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let (n, d) = (6usize, 4usize);
    let data: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let heads = Tensor64::new(vec![n, d], data.clone()).unwrap();
    let ls = labels_mod(n, 3);
    let (base, _) = supcon_loss(&heads, &ls, 0.4, true).unwrap();

    // Compose random Givens rotations into one orthogonal map.
    let mut rot = vec![vec![0.0f64; d]; d];
    for (i, row) in rot.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _ in 0..8 {
        let a = rng.random_range(0..d);
        let mut b = rng.random_range(0..d);
        if a == b {
            b = (b + 1) % d;
        }
        let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let (s, c) = theta.sin_cos();
        for row in rot.iter_mut() {
            let (ra, rb) = (row[a], row[b]);
            row[a] = c * ra - s * rb;
            row[b] = s * ra + c * rb;
        }
    }
    let mut rotated = vec![0.0f64; n * d];
    for i in 0..n {
        for j in 0..d {
            let mut acc = 0.0;
            for k in 0..d {
                acc += data[i * d + k] * rot[k][j];
            }
            rotated[i * d + j] = acc;
        }
    }
    let rotated = Tensor64::new(vec![n, d], rotated).unwrap();
    let (after, _) = supcon_loss(&rotated, &ls, 0.4, true).unwrap();
    assert!(
        (base - after).abs() < 1e-6,
        "rotation changed the loss: {base} vs {after}"
    );
}

/// Small discrete joints where the exact mutual information is enumerable:
/// the variational bound never exceeds it, and is tight for the true
/// posterior.
#[test]
fn variational_bound_below_exact_mutual_information() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for trial in 0..50 {
        let nz = rng.random_range(2..=4usize);
        let ny = rng.random_range(2..=3usize);
        // Joint with probabilities in multiples of 1/240 so a finite sample
        // can realize it exactly.
        let total_units = 240usize;
        let mut units = vec![vec![0usize; ny]; nz];
        let mut remaining = total_units;
        for z in 0..nz {
            for y in 0..ny {
                let is_last = z == nz - 1 && y == ny - 1;
                let take = if is_last {
                    remaining
                } else {
                    let cap = remaining.saturating_sub(nz * ny - z * ny - y - 1);
                    rng.random_range(1..=cap.max(1).min(40))
                };
                units[z][y] = take.max(1);
                remaining = remaining.saturating_sub(units[z][y]);
            }
        }
        let n: usize = units.iter().flatten().sum();
        let p = |z: usize, y: usize| units[z][y] as f64 / n as f64;
        let pz: Vec<f64> = (0..nz).map(|z| (0..ny).map(|y| p(z, y)).sum()).collect();
        let py: Vec<f64> = (0..ny).map(|y| (0..nz).map(|z| p(z, y)).sum()).collect();
        let mut exact_mi = 0.0;
        for z in 0..nz {
            for y in 0..ny {
                if units[z][y] > 0 {
                    exact_mi += p(z, y) * (p(z, y) / (pz[z] * py[y])).ln();
                }
            }
        }

        // Realize the joint exactly as a dataset, classifier logits =
        // log q(y|z).
        let build_logits = |q: &dyn Fn(usize, usize) -> f64| -> (Matrix, Vec<ClassLabel>) {
            let mut rows = Vec::new();
            let mut ls = Vec::new();
            for z in 0..nz {
                for y in 0..ny {
                    for _ in 0..units[z][y] {
                        for yy in 0..ny {
                            rows.push(q(z, yy).max(1e-300).ln());
                        }
                        ls.push(ClassLabel::from_index(y, ny).unwrap());
                    }
                }
            }
            (Matrix::from_vec(n, ny, rows).unwrap(), ls)
        };

        // Bayes-optimal classifier: the bound is tight.
        let posterior = |z: usize, y: usize| p(z, y) / pz[z];
        let (logits, ls) = build_logits(&posterior);
        let bound = variational_mi_lower_bound(&logits, &ls).unwrap();
        assert!(
            (bound - exact_mi).abs() < 1e-6,
            "trial {trial}: tight bound {bound} vs exact {exact_mi}"
        );

        // A blurred classifier: still a valid lower bound.
        let blurred = |z: usize, y: usize| 0.5 * posterior(z, y) + 0.5 / ny as f64;
        let (logits, ls) = build_logits(&blurred);
        let bound = variational_mi_lower_bound(&logits, &ls).unwrap();
        assert!(
            bound <= exact_mi + 1e-9,
            "trial {trial}: bound {bound} exceeds exact {exact_mi}"
        );
    }
}
