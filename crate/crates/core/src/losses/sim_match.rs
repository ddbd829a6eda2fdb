//! Similarity matching: align the cosine structure of heads with the cosine
//! structure of one-hot labels.

use crate::error::{Error, Result};
use crate::label::{one_hot_rows, ClassLabel};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone)]
pub struct SimMatchResult<F: Real> {
    pub loss: f64,
    pub grad: Tensor<F>,
    /// Rows whose batch-centered vector had zero norm; cosine entries
    /// involving them fall back to 0 and receive no gradient.
    pub zero_norm_rows: usize,
}

/// Rows are batch-mean centered (per feature), then pairwise cosines are
/// compared in squared Frobenius distance against the same construction on
/// one-hot labels.
pub fn similarity_matching_loss<F: Real>(
    heads: &Tensor<F>,
    labels: &[ClassLabel],
    class_count: usize,
) -> Result<SimMatchResult<F>> {
    let m = heads.batch();
    let d = heads.sample_len();
    if m < 2 {
        return Err(Error::Sample(format!("need at least 2 samples, got {m}")));
    }
    if d == 0 {
        return Err(Error::Dimension("heads have zero width".into()));
    }
    if labels.len() != m {
        return Err(Error::Dimension(format!(
            "{m} head rows but {} labels",
            labels.len()
        )));
    }

    let h: Vec<Vec<f64>> = (0..m)
        .map(|i| heads.sample(i).iter().map(|v| v.to_f64()).collect())
        .collect();
    let (hc, _) = center_columns(&h, m, d);
    let y_flat = one_hot_rows(labels, class_count);
    let y: Vec<Vec<f64>> = (0..m)
        .map(|i| y_flat[i * class_count..(i + 1) * class_count].to_vec())
        .collect();
    let (yc, _) = center_columns(&y, m, class_count);

    let (sim_h, unit_h, norms_h, zero_h) = cosine_matrix(&hc);
    let (sim_y, _, _, _) = cosine_matrix(&yc);

    let mut loss = 0.0f64;
    for i in 0..m {
        for j in 0..m {
            let dlt = sim_h[i * m + j] - sim_y[i * m + j];
            loss += dlt * dlt;
        }
    }

    // Gradient through the head cosine matrix only; zero-norm rows are
    // skipped (their cosine entries are the constant fallback).
    let mut grad_hc = vec![vec![0.0f64; d]; m];
    for i in 0..m {
        if norms_h[i] == 0.0 {
            continue;
        }
        for j in 0..m {
            if i == j || norms_h[j] == 0.0 {
                continue;
            }
            let diff = sim_h[i * m + j] - sim_y[i * m + j];
            if diff == 0.0 {
                continue;
            }
            // d cos(i,j) / d hc_i = (u_j - cos * u_i) / ||hc_i||; entries
            // (i,j) and (j,i) both contribute, hence the factor 4.
            let w = 4.0 * diff / norms_h[i];
            let cos = sim_h[i * m + j];
            for c in 0..d {
                grad_hc[i][c] += w * (unit_h[j][c] - cos * unit_h[i][c]);
            }
        }
    }

    // Back through the batch-mean centering: subtract the column means of the
    // gradient itself.
    let mut col_mean = vec![0.0f64; d];
    for row in &grad_hc {
        for (cm, g) in col_mean.iter_mut().zip(row) {
            *cm += g;
        }
    }
    for cm in &mut col_mean {
        *cm /= m as f64;
    }
    let mut grad = Tensor::zeros(heads.shape());
    for i in 0..m {
        let out = grad.sample_mut(i);
        for c in 0..d {
            out[c] = F::from_f64(grad_hc[i][c] - col_mean[c]);
        }
    }

    Ok(SimMatchResult { loss, grad, zero_norm_rows: zero_h })
}

fn center_columns(rows: &[Vec<f64>], m: usize, d: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut mean = vec![0.0f64; d];
    for row in rows {
        for (s, v) in mean.iter_mut().zip(row) {
            *s += v;
        }
    }
    for s in &mut mean {
        *s /= m as f64;
    }
    let centered = rows
        .iter()
        .map(|row| row.iter().zip(&mean).map(|(v, mu)| v - mu).collect())
        .collect();
    (centered, mean)
}

/// Pairwise cosines with a zero-for-zero-norm fallback (including diagonal
/// entries of zero rows). Returns (matrix, unit rows, norms, zero-row count).
#[allow(clippy::type_complexity)]
fn cosine_matrix(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>, Vec<f64>, usize) {
    let m = rows.len();
    let d = rows[0].len();
    let mut norms = vec![0.0f64; m];
    let mut unit = vec![vec![0.0f64; d]; m];
    let mut zero_rows = 0usize;
    for (i, row) in rows.iter().enumerate() {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        norms[i] = n;
        if n == 0.0 {
            zero_rows += 1;
        } else {
            for (u, v) in unit[i].iter_mut().zip(row) {
                *u = v / n;
            }
        }
    }
    let mut sim = vec![0.0f64; m * m];
    for i in 0..m {
        for j in i..m {
            let v = if norms[i] == 0.0 || norms[j] == 0.0 {
                0.0
            } else if i == j {
                1.0
            } else {
                unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum()
            };
            sim[i * m + j] = v;
            sim[j * m + i] = v;
        }
    }
    (sim, unit, norms, zero_rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(one_based: &[usize], c: usize) -> Vec<ClassLabel> {
        one_based.iter().map(|&l| ClassLabel::new(l, c).unwrap()).collect()
    }

    #[test]
    fn heads_equal_to_one_hots_give_zero() {
        let heads =
            Tensor::<f64>::new(vec![3, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        let r = similarity_matching_loss(&heads, &labels(&[1, 2, 1], 2), 2).unwrap();
        assert!(r.loss.abs() < 1e-12, "got {}", r.loss);
        assert_eq!(r.zero_norm_rows, 0);
    }

    #[test]
    fn same_class_pair_exercises_fallback() {
        // Two identical one-hot labels center to zero rows on the label side.
        let heads = Tensor::<f64>::new(vec![2, 2], vec![0.9, 0.1, 0.2, 0.8]).unwrap();
        let r = similarity_matching_loss(&heads, &labels(&[1, 1], 2), 2).unwrap();
        assert!(r.loss.is_finite());
    }

    #[test]
    fn zero_centered_heads_are_flagged() {
        let heads = Tensor::<f64>::new(vec![2, 2], vec![0.4, 0.4, 0.4, 0.4]).unwrap();
        let r = similarity_matching_loss(&heads, &labels(&[1, 2], 2), 2).unwrap();
        assert_eq!(r.zero_norm_rows, 2);
    }

    #[test]
    fn matches_brute_force_double_loop() {
        let heads = Tensor::<f64>::new(
            vec![4, 3],
            vec![
                0.3, -0.7, 0.2, 1.1, 0.4, -0.2, -0.5, 0.9, 0.8, 0.1, -0.3, 0.6,
            ],
        )
        .unwrap();
        let ls = labels(&[1, 2, 2, 1], 2);
        let r = similarity_matching_loss(&heads, &ls, 2).unwrap();

        // Naive reference evaluation.
        let m = 4;
        let rows: Vec<Vec<f64>> = (0..m).map(|i| heads.sample(i).to_vec()).collect();
        let (hc, _) = center_columns(&rows, m, 3);
        let y_flat = one_hot_rows(&ls, 2);
        let yrows: Vec<Vec<f64>> = (0..m).map(|i| y_flat[i * 2..(i + 1) * 2].to_vec()).collect();
        let (yc, _) = center_columns(&yrows, m, 2);
        let cos = |a: &[f64], b: &[f64]| {
            let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                0.0
            } else {
                a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
            }
        };
        let mut want = 0.0;
        for i in 0..m {
            for j in 0..m {
                let a = if i == j { 1.0 } else { cos(&hc[i], &hc[j]) };
                let b = if i == j { 1.0 } else { cos(&yc[i], &yc[j]) };
                want += (a - b) * (a - b);
            }
        }
        assert!((r.loss - want).abs() < 1e-8, "{} vs {want}", r.loss);
    }
}
