//! Goodness-based logistic loss for forward-forward training.

use crate::error::{Error, Result};
use crate::losses::softplus;
use crate::tensor::{Real, Tensor};

/// Mean logistic loss on signed goodness: for sample `i` with sign `s_i`
/// (+1 for a correctly-labeled pair, -1 otherwise),
/// `loss_i = log(1 + exp(-s_i (||z_i||^2 - theta)))`.
pub fn ff_goodness_loss<F: Real>(
    z: &Tensor<F>,
    is_positive: &[bool],
    theta: f64,
) -> Result<(f64, Tensor<F>)> {
    let m = z.batch();
    let d = z.sample_len();
    if d == 0 {
        return Err(Error::Dimension("goodness needs at least one feature".into()));
    }
    if is_positive.len() != m {
        return Err(Error::Dimension(format!(
            "{m} rows but {} pair signs",
            is_positive.len()
        )));
    }
    let mf = m as f64;
    let mut loss = 0.0f64;
    let mut grad = Tensor::zeros(z.shape());
    for i in 0..m {
        let row = z.sample(i);
        let g: f64 = row.iter().map(|v| v.to_f64() * v.to_f64()).sum();
        let s = if is_positive[i] { 1.0 } else { -1.0 };
        let u = s * (g - theta);
        loss += softplus(-u);
        // d softplus(-u)/du = -sigmoid(-u); du/dz = 2 s z.
        let sig = 1.0 / (1.0 + u.exp());
        let coeff = -sig * s * 2.0 / mf;
        let out = grad.sample_mut(i);
        for (gv, v) in out.iter_mut().zip(row) {
            *gv = F::from_f64(coeff * v.to_f64());
        }
    }
    Ok((loss / mf, grad))
}
