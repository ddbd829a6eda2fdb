//! Supervised contrastive loss.

use crate::error::{Error, Result};
use crate::label::ClassLabel;
use crate::losses::log_sum_exp;
use crate::tensor::{Real, Tensor};

/// Mean over anchors of the mean over positives of the negative
/// log softmax-similarity; the denominator runs over every non-anchor sample.
///
/// With `normalize` set, head vectors are L2-normalized inside the loss and
/// the returned gradient accounts for the normalization. With it unset the
/// raw dot products are used.
pub fn supcon_loss<F: Real>(
    heads: &Tensor<F>,
    labels: &[ClassLabel],
    tau: f64,
    normalize: bool,
) -> Result<(f64, Tensor<F>)> {
    let m = heads.batch();
    let d = heads.sample_len();
    if m < 2 {
        return Err(Error::Sample(format!(
            "contrastive loss needs at least 2 samples, got {m}"
        )));
    }
    if labels.len() != m {
        return Err(Error::Dimension(format!(
            "{m} head rows but {} labels",
            labels.len()
        )));
    }
    if tau <= 0.0 {
        return Err(Error::Parameter(format!("temperature must be positive, got {tau}")));
    }

    // Upcast and optionally normalize.
    let raw: Vec<Vec<f64>> = (0..m)
        .map(|i| heads.sample(i).iter().map(|v| v.to_f64()).collect())
        .collect();
    let mut norms = vec![1.0f64; m];
    let unit: Vec<Vec<f64>> = if normalize {
        let mut rows = Vec::with_capacity(m);
        for (i, r) in raw.iter().enumerate() {
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 {
                return Err(Error::Numeric(format!(
                    "head row {i} has zero norm and cannot be normalized"
                )));
            }
            norms[i] = n;
            rows.push(r.iter().map(|v| v / n).collect());
        }
        rows
    } else {
        raw.clone()
    };

    // Positive sets.
    let mut positives: Vec<Vec<usize>> = vec![Vec::new(); m];
    for i in 0..m {
        for j in 0..m {
            if i != j && labels[i] == labels[j] {
                positives[i].push(j);
            }
        }
        if positives[i].is_empty() {
            return Err(Error::Pairing(format!(
                "sample {i} has no same-class partner in the batch"
            )));
        }
    }

    // Similarity logits.
    let mut sims = vec![0.0f64; m * m];
    for i in 0..m {
        for j in (i + 1)..m {
            let dot: f64 = unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum();
            let s = dot / tau;
            sims[i * m + j] = s;
            sims[j * m + i] = s;
        }
    }

    let mut loss = 0.0f64;
    // grad_sims[i*m+j] = d loss / d sims[i][j], for j != i.
    let mut grad_sims = vec![0.0f64; m * m];
    let inv_m = 1.0 / m as f64;
    let mut others = vec![0.0f64; m - 1];
    for i in 0..m {
        let mut idx = 0;
        for j in 0..m {
            if j != i {
                others[idx] = sims[i * m + j];
                idx += 1;
            }
        }
        let lse = log_sum_exp(&others);
        let inv_p = 1.0 / positives[i].len() as f64;
        for &p in &positives[i] {
            loss += (lse - sims[i * m + p]) * inv_p;
            grad_sims[i * m + p] -= inv_p * inv_m;
        }
        for j in 0..m {
            if j != i {
                grad_sims[i * m + j] += (sims[i * m + j] - lse).exp() * inv_m;
            }
        }
    }
    loss *= inv_m;

    // Back through the similarities to the (unit) head vectors.
    let mut grad_unit = vec![vec![0.0f64; d]; m];
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let w = (grad_sims[i * m + j] + grad_sims[j * m + i]) / tau;
            if w == 0.0 {
                continue;
            }
            for (g, &uj) in grad_unit[i].iter_mut().zip(&unit[j]) {
                *g += w * uj;
            }
        }
    }

    // Back through the normalization when active.
    let mut grad = Tensor::zeros(heads.shape());
    for i in 0..m {
        let out = grad.sample_mut(i);
        if normalize {
            let dot: f64 = grad_unit[i].iter().zip(&unit[i]).map(|(a, b)| a * b).sum();
            for (c, g) in out.iter_mut().enumerate() {
                *g = F::from_f64((grad_unit[i][c] - dot * unit[i][c]) / norms[i]);
            }
        } else {
            for (c, g) in out.iter_mut().enumerate() {
                *g = F::from_f64(grad_unit[i][c]);
            }
        }
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(one_based: &[usize], c: usize) -> Vec<ClassLabel> {
        one_based.iter().map(|&l| ClassLabel::new(l, c).unwrap()).collect()
    }

    #[test]
    fn single_pair_is_zero() {
        let heads = Tensor::<f64>::new(vec![2, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let (loss, _) = supcon_loss(&heads, &labels(&[1, 1], 2), 0.5, true).unwrap();
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn identical_heads_balanced_classes() {
        // 2N = 4 with |P(i)| = 1 for every anchor: loss = ln 3.
        let heads = Tensor::<f64>::new(vec![4, 2], vec![[0.6, 0.8]; 4].concat()).unwrap();
        let (loss, _) = supcon_loss(&heads, &labels(&[1, 1, 2, 2], 2), 0.3, true).unwrap();
        assert!((loss - 3.0f64.ln()).abs() < 1e-10, "got {loss}");
    }

    #[test]
    fn missing_positive_is_rejected() {
        let heads = Tensor::<f32>::zeros(&[3, 2]);
        let err = supcon_loss(&heads, &labels(&[1, 1, 2], 2), 0.5, false).unwrap_err();
        assert!(matches!(err, Error::Pairing(_)));
    }
}
