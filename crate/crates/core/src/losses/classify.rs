//! Multi-class cross entropy over logits.

use crate::error::{Error, Result};
use crate::label::ClassLabel;
use crate::losses::log_sum_exp;
use crate::tensor::{Real, Tensor};

/// Mean negative log-softmax of the true class.
///
/// Returns the scalar loss and the gradient `(softmax - onehot) / m` with
/// respect to the logits.
pub fn cross_entropy<F: Real>(
    logits: &Tensor<F>,
    labels: &[ClassLabel],
) -> Result<(f64, Tensor<F>)> {
    let m = logits.batch();
    let c = logits.sample_len();
    if c < 2 {
        return Err(Error::Dimension(format!(
            "cross entropy needs at least 2 classes, got {c}"
        )));
    }
    if labels.len() != m {
        return Err(Error::Dimension(format!(
            "{m} logit rows but {} labels",
            labels.len()
        )));
    }
    let mut loss = 0.0f64;
    let mut grad = Tensor::zeros(logits.shape());
    let mf = m as f64;
    let mut row = vec![0.0f64; c];
    for i in 0..m {
        let label = labels[i];
        if label.index() >= c {
            return Err(Error::Label(format!(
                "label {} outside the {c}-class logit width",
                label.one_based()
            )));
        }
        for (dst, v) in row.iter_mut().zip(logits.sample(i)) {
            *dst = v.to_f64();
        }
        let lse = log_sum_exp(&row);
        loss += lse - row[label.index()];
        let grow = grad.sample_mut(i);
        for (j, g) in grow.iter_mut().enumerate() {
            let p = (row[j] - lse).exp();
            let target = if j == label.index() { 1.0 } else { 0.0 };
            *g = F::from_f64((p - target) / mf);
        }
    }
    Ok((loss / mf, grad))
}

/// Fraction of rows whose argmax matches the label.
pub fn accuracy<F: Real>(logits: &Tensor<F>, labels: &[ClassLabel]) -> f64 {
    let m = logits.batch();
    if m == 0 {
        return 0.0;
    }
    let mut correct = 0usize;
    for i in 0..m {
        let row = logits.sample(i);
        let mut best = 0usize;
        for (j, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = j;
            }
        }
        if best == labels[i].index() {
            correct += 1;
        }
    }
    correct as f64 / m as f64
}
