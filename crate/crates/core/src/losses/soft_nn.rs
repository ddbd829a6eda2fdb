//! Soft nearest neighbor loss (analysis-only; no gradient).

use crate::error::{Error, Result};
use crate::label::ClassLabel;
use crate::losses::log_sum_exp;
use crate::tensor::{Real, Tensor};

/// Batch soft nearest neighbor loss at temperature `t`:
/// mean over anchors of `-log( sum_pos exp(-d^2/T) / sum_other exp(-d^2/T) )`.
pub fn soft_nearest_neighbor_loss<F: Real>(
    z: &Tensor<F>,
    labels: &[ClassLabel],
    t: f64,
) -> Result<f64> {
    let b = z.batch();
    if b < 2 {
        return Err(Error::Sample(format!("need at least 2 samples, got {b}")));
    }
    if labels.len() != b {
        return Err(Error::Dimension(format!(
            "{b} rows but {} labels",
            labels.len()
        )));
    }
    if t <= 0.0 {
        return Err(Error::Parameter(format!("temperature must be positive, got {t}")));
    }
    let rows: Vec<Vec<f64>> = (0..b)
        .map(|i| z.sample(i).iter().map(|v| v.to_f64()).collect())
        .collect();

    let mut total = 0.0f64;
    for i in 0..b {
        let mut pos = Vec::new();
        let mut all = Vec::with_capacity(b - 1);
        for j in 0..b {
            if j == i {
                continue;
            }
            let sq: f64 = rows[i]
                .iter()
                .zip(&rows[j])
                .map(|(a, c)| (a - c) * (a - c))
                .sum();
            let e = -sq / t;
            all.push(e);
            if labels[j] == labels[i] {
                pos.push(e);
            }
        }
        if pos.is_empty() {
            return Err(Error::Pairing(format!(
                "sample {i} has no same-class partner in the batch"
            )));
        }
        total -= log_sum_exp(&pos) - log_sum_exp(&all);
    }
    Ok(total / b as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(one_based: &[usize], c: usize) -> Vec<ClassLabel> {
        one_based.iter().map(|&l| ClassLabel::new(l, c).unwrap()).collect()
    }

    #[test]
    fn collapsed_representation_tends_to_log_c() {
        // All z identical: per anchor the ratio is |pos| / (b-1); with b
        // large and c balanced classes this approaches 1/c.
        let c = 4;
        let per = 64;
        let b = c * per;
        let z = Tensor::<f64>::filled(&[b, 3], 0.5);
        let ls: Vec<ClassLabel> = (0..b)
            .map(|i| ClassLabel::new(i % c + 1, c).unwrap())
            .collect();
        let v = soft_nearest_neighbor_loss(&z, &ls, 1.0).unwrap();
        assert!((v - (c as f64).ln()).abs() < 0.02, "got {v}");
    }

    #[test]
    fn separated_clusters_at_low_temperature_vanish() {
        let z = Tensor::<f64>::new(
            vec![4, 1],
            vec![0.0, 0.01, 10.0, 10.01],
        )
        .unwrap();
        let v = soft_nearest_neighbor_loss(&z, &labels(&[1, 1, 2, 2], 2), 1e-3).unwrap();
        assert!(v.abs() < 1e-10, "got {v}");
    }

    #[test]
    fn matches_naive_double_sum() {
        let z = Tensor::<f64>::new(
            vec![4, 2],
            vec![0.1, 0.9, -0.4, 0.2, 0.8, -0.7, 0.05, 0.3],
        )
        .unwrap();
        let ls = labels(&[1, 2, 1, 2], 2);
        let t = 0.7;
        let got = soft_nearest_neighbor_loss(&z, &ls, t).unwrap();

        let rows: Vec<&[f64]> = (0..4).map(|i| z.sample(i)).collect();
        let mut want = 0.0;
        for i in 0..4 {
            let mut num = 0.0;
            let mut den = 0.0;
            for j in 0..4 {
                if j == i {
                    continue;
                }
                let sq: f64 = rows[i]
                    .iter()
                    .zip(rows[j])
                    .map(|(a, c)| (a - c) * (a - c))
                    .sum();
                let e = (-sq / t).exp();
                den += e;
                if ls[i] == ls[j] {
                    num += e;
                }
            }
            want -= (num / den).ln();
        }
        want /= 4.0;
        assert!((got - want).abs() < 1e-10);
    }

    #[test]
    fn permutation_invariance() {
        let z = Tensor::<f64>::new(
            vec![4, 1],
            vec![0.3, -0.2, 0.9, 0.4],
        )
        .unwrap();
        let ls = labels(&[1, 2, 1, 2], 2);
        let a = soft_nearest_neighbor_loss(&z, &ls, 0.5).unwrap();

        let zp = Tensor::<f64>::new(
            vec![4, 1],
            vec![0.4, 0.9, -0.2, 0.3],
        )
        .unwrap();
        let lsp = labels(&[2, 1, 2, 1], 2);
        let b = soft_nearest_neighbor_loss(&zp, &lsp, 0.5).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn lonely_sample_is_rejected() {
        let z = Tensor::<f32>::zeros(&[3, 2]);
        assert!(matches!(
            soft_nearest_neighbor_loss(&z, &labels(&[1, 1, 2], 2), 1.0),
            Err(Error::Pairing(_))
        ));
    }
}
