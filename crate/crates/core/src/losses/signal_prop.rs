//! Signal propagation loss: cross entropy between forwarded label-signal
//! similarity and row-softmax output similarity.

use crate::error::{Error, Result};
use crate::losses::log_sum_exp;
use crate::tensor::{Real, Tensor};

/// Target construction mode for the forwarded signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpMode {
    /// Indicator targets: the `k` most similar other samples get a one.
    Hard { k: usize },
    /// Row-softmax of the signal similarities.
    Soft,
}

/// Cross entropy between signal-similarity targets and
/// `RowWiseSoftmax(Z Z^T / d)`, averaged over rows. Returns the gradient
/// with respect to `z`; the forwarded signal is treated as a constant.
pub fn signal_propagation_loss<F: Real>(
    z: &Tensor<F>,
    s_prev: &Tensor<F>,
    mode: SpMode,
) -> Result<(f64, Tensor<F>)> {
    let m = z.batch();
    if m < 2 {
        return Err(Error::Sample(format!("need at least 2 samples, got {m}")));
    }
    if s_prev.batch() != m {
        return Err(Error::Dimension(format!(
            "z has {m} rows but signal has {}",
            s_prev.batch()
        )));
    }
    if let SpMode::Hard { k } = mode {
        if k == 0 || k > m - 1 {
            return Err(Error::Parameter(format!(
                "hard target k must be in [1, {}], got {k}",
                m - 1
            )));
        }
    }
    let d = z.sample_len();
    let d_prev = s_prev.sample_len();

    let zrows: Vec<Vec<f64>> = (0..m)
        .map(|i| z.sample(i).iter().map(|v| v.to_f64()).collect())
        .collect();
    let srows: Vec<Vec<f64>> = (0..m)
        .map(|i| s_prev.sample(i).iter().map(|v| v.to_f64()).collect())
        .collect();

    // Output similarity logits A = Z Z^T / d, then row-softmax (diagonal included).
    let mut a = vec![0.0f64; m * m];
    for i in 0..m {
        for j in i..m {
            let dot: f64 = zrows[i].iter().zip(&zrows[j]).map(|(x, y)| x * y).sum();
            a[i * m + j] = dot / d as f64;
            a[j * m + i] = a[i * m + j];
        }
    }
    let mut log_p = vec![0.0f64; m * m];
    for i in 0..m {
        let row = &a[i * m..(i + 1) * m];
        let lse = log_sum_exp(row);
        for j in 0..m {
            log_p[i * m + j] = row[j] - lse;
        }
    }

    // Targets from the forwarded signal.
    let targets = match mode {
        SpMode::Soft => {
            let mut t = vec![0.0f64; m * m];
            for i in 0..m {
                let mut row = vec![0.0f64; m];
                for (j, r) in row.iter_mut().enumerate() {
                    let dot: f64 = srows[i].iter().zip(&srows[j]).map(|(x, y)| x * y).sum();
                    *r = dot / d_prev as f64;
                }
                let lse = log_sum_exp(&row);
                for j in 0..m {
                    t[i * m + j] = (row[j] - lse).exp();
                }
            }
            t
        }
        SpMode::Hard { k } => {
            let mut t = vec![0.0f64; m * m];
            for i in 0..m {
                // Similarities to every other sample; ties break toward the
                // lowest index, which the stable sort preserves.
                let mut sims: Vec<(usize, f64)> = (0..m)
                    .filter(|&j| j != i)
                    .map(|j| {
                        let dot: f64 =
                            srows[i].iter().zip(&srows[j]).map(|(x, y)| x * y).sum();
                        (j, dot)
                    })
                    .collect();
                sims.sort_by(|l, r| r.1.partial_cmp(&l.1).unwrap_or(std::cmp::Ordering::Equal));
                for &(j, _) in sims.iter().take(k) {
                    t[i * m + j] = 1.0;
                }
            }
            t
        }
    };

    let mut loss = 0.0f64;
    for i in 0..m {
        for j in 0..m {
            let t = targets[i * m + j];
            if t != 0.0 {
                loss -= t * log_p[i * m + j];
            }
        }
    }
    loss /= m as f64;

    // d loss / d A_ij = (w_i * p_ij - t_ij) / m with w_i the target row mass.
    let mut ga = vec![0.0f64; m * m];
    for i in 0..m {
        let w: f64 = targets[i * m..(i + 1) * m].iter().sum();
        for j in 0..m {
            ga[i * m + j] = (w * log_p[i * m + j].exp() - targets[i * m + j]) / m as f64;
        }
    }
    // d loss / d z = (G + G^T) Z / d.
    let mut grad = Tensor::zeros(z.shape());
    for i in 0..m {
        let out = grad.sample_mut(i);
        for j in 0..m {
            let w = (ga[i * m + j] + ga[j * m + i]) / d as f64;
            if w == 0.0 {
                continue;
            }
            for (g, &zj) in out.iter_mut().zip(&zrows[j]) {
                *g += F::from_f64(w * zj);
            }
        }
    }
    Ok((loss, grad))
}
