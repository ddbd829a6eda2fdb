//! Variational mutual-information lower bound and the soft-nearest-neighbor
//! dependence inequality, checked numerically.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::label::ClassLabel;
use crate::linalg::Matrix;

/// `-CE(classifier) + H(Y)`: a lower bound on the mutual information between
/// labels and the variable the classifier reads. `H(Y)` comes from empirical
/// label frequencies; the bound can be negative for poor classifiers.
pub fn variational_mi_lower_bound(logits: &Matrix, labels: &[ClassLabel]) -> Result<f64> {
    let n = logits.rows();
    let c = logits.cols();
    if labels.len() != n {
        return Err(Error::Dimension(format!(
            "{n} logit rows but {} labels",
            labels.len()
        )));
    }
    let mut ce = 0.0f64;
    for i in 0..n {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        ce += lse - row[labels[i].index()];
    }
    ce /= n as f64;

    let mut counts = vec![0usize; c];
    for l in labels {
        counts[l.index()] += 1;
    }
    let mut entropy = 0.0f64;
    for &k in &counts {
        if k > 0 {
            let p = k as f64 / n as f64;
            entropy -= p * p.ln();
        }
    }
    Ok(entropy - ce)
}

/// Result of one soft-nearest-neighbor / dependence inequality check.
#[derive(Debug, Clone, Copy)]
pub struct BoundCheck {
    /// Monte-Carlo estimate of the population soft nearest neighbor loss at
    /// temperature `2 sigma^2`.
    pub lhs: f64,
    /// `log c - c * exp(2 M^2 / sigma^2) * HSIC(Y, Z)`.
    pub rhs: f64,
    pub holds: bool,
    pub mc_stderr: f64,
    pub hsic_yz: f64,
}

/// Exact population dependence between one-hot labels (linear kernel) and a
/// representation under kernel `k`, for a class-balanced discrete
/// distribution given by samples: `(1/c) (E_pos[k] - E_indep[k])` where the
/// positive expectation runs over ordered same-class pairs with replacement.
pub fn hsic_yz_exact_form(
    z: &Matrix,
    labels: &[ClassLabel],
    class_count: usize,
    kernel: impl Fn(&[f64], &[f64]) -> f64,
) -> f64 {
    let n = z.rows();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); class_count];
    for (i, l) in labels.iter().enumerate() {
        by_class[l.index()].push(i);
    }
    // E over p_pos(z, z') = (1/c) sum_y E[k | both in class y].
    let mut e_pos = 0.0f64;
    for members in &by_class {
        let mut s = 0.0f64;
        for &i in members {
            for &j in members {
                s += kernel(z.row(i), z.row(j));
            }
        }
        e_pos += s / (members.len() * members.len()) as f64;
    }
    e_pos /= class_count as f64;

    let mut e_indep = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            e_indep += kernel(z.row(i), z.row(j));
        }
    }
    e_indep /= (n * n) as f64;

    (e_pos - e_indep) / class_count as f64
}

/// Numerically checks the asymptotic inequality
/// `soft-NN loss at T = 2 sigma^2  >=  log c - c exp(2 M^2 / sigma^2) HSIC(Y,Z)`.
///
/// The left side is a Monte-Carlo estimate on the empirical distribution of
/// `z`: every sample anchors once, with `n_mc` positives and `c * n_mc`
/// negatives drawn with replacement. `holds` allows three anchor-level
/// standard errors of slack.
pub fn snn_hsic_bound_check(
    z: &Matrix,
    labels: &[ClassLabel],
    class_count: usize,
    sigma: f64,
    n_mc: usize,
    seed: u64,
    norm_bound: Option<f64>,
) -> Result<BoundCheck> {
    let b = z.rows();
    if labels.len() != b {
        return Err(Error::Dimension(format!("{b} rows but {} labels", labels.len())));
    }
    if sigma <= 0.0 {
        return Err(Error::Parameter(format!("sigma must be positive, got {sigma}")));
    }
    let mut counts = vec![0usize; class_count];
    for l in labels {
        counts[l.index()] += 1;
    }
    let ideal = b as f64 / class_count as f64;
    if counts.iter().any(|&k| (k as f64 - ideal).abs() > 1.0) {
        return Err(Error::Precondition(
            "the inequality assumes class-balanced data".into(),
        ));
    }

    let max_norm = (0..b)
        .map(|i| z.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0f64, f64::max);
    let m_bound = match norm_bound {
        Some(m) => {
            if max_norm > m + 1e-12 {
                return Err(Error::Precondition(format!(
                    "representation norm {max_norm} exceeds the stated bound {m}"
                )));
            }
            m
        }
        None => max_norm,
    };

    let t = 2.0 * sigma * sigma;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); class_count];
    for (i, l) in labels.iter().enumerate() {
        by_class[l.index()].push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut terms = Vec::with_capacity(b);
    let sq_dist = |a: &[f64], c: &[f64]| -> f64 {
        a.iter().zip(c).map(|(x, y)| (x - y) * (x - y)).sum()
    };
    for i in 0..b {
        let members = &by_class[labels[i].index()];
        // log-sum-exp over sampled positives and negatives.
        let mut pos_exps = Vec::with_capacity(n_mc);
        for _ in 0..n_mc {
            let j = members[rng.random_range(0..members.len())];
            pos_exps.push(-sq_dist(z.row(i), z.row(j)) / t);
        }
        let mut neg_exps = Vec::with_capacity(class_count * n_mc);
        for _ in 0..class_count * n_mc {
            let j = rng.random_range(0..b);
            neg_exps.push(-sq_dist(z.row(i), z.row(j)) / t);
        }
        let lse = |v: &[f64]| {
            let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            max + v.iter().map(|e| (e - max).exp()).sum::<f64>().ln()
        };
        terms.push(-(lse(&pos_exps) - lse(&neg_exps)));
    }
    let lhs = terms.iter().sum::<f64>() / b as f64;
    let var = terms.iter().map(|v| (v - lhs) * (v - lhs)).sum::<f64>() / b as f64;
    let mc_stderr = (var / b as f64).sqrt();

    let kernel = |a: &[f64], c: &[f64]| (-sq_dist(a, c) / t).exp();
    let hsic_yz = hsic_yz_exact_form(z, labels, class_count, kernel);
    let rhs = (class_count as f64).ln()
        - class_count as f64 * (2.0 * m_bound * m_bound / (sigma * sigma)).exp() * hsic_yz;
    Ok(BoundCheck {
        lhs,
        rhs,
        holds: lhs >= rhs - 3.0 * mc_stderr,
        mc_stderr,
        hsic_yz,
    })
}
