//! Differentiable normalized-dependence penalty for local losses.

use crate::error::{Error, Result};
use crate::hsic::{nhsic_with_gradient, pool_features, KernelSpec};
use crate::linalg::Matrix;
use crate::tensor::{Real, Tensor};

/// Normalized dependence between the (fixed) input batch and the trainable
/// representation `z`, plus its gradient with respect to `z`.
///
/// Computation happens in f64 regardless of the training scalar; the input
/// side is pooled to at most 2048 features, the representation is used as-is
/// because gradients must flow through every coordinate.
pub fn nhsic_penalty<F: Real>(
    z: &Tensor<F>,
    x_batch: &Tensor<F>,
    x_kernel: &KernelSpec,
    z_kernel: &KernelSpec,
    epsilon: f64,
) -> Result<(f64, Tensor<F>)> {
    let m = z.batch();
    if x_batch.batch() != m {
        return Err(Error::Sample(format!(
            "z has {m} samples but x has {}",
            x_batch.batch()
        )));
    }
    let x_mat = pooled_matrix(x_batch)?;
    let z_flat = z.flattened_2d();
    let z_mat = Matrix::from_vec(m, z_flat.sample_len(), z_flat.to_f64_vec())?;
    let (value, grad_mat) = nhsic_with_gradient(&x_mat, &z_mat, x_kernel, z_kernel, epsilon)?;
    let grad = Tensor::from_f64_slice(z.shape(), grad_mat.data())?;
    Ok((value, grad))
}

/// `base - lambda * nhsic(X, Z)`: combines a base local loss (value and
/// gradient already taken with respect to `z`) with the dependence penalty.
/// With `lambda = 0` the base is returned untouched.
pub fn hsic_augmented_local_loss<F: Real>(
    base: (f64, Tensor<F>),
    z: &Tensor<F>,
    x_batch: &Tensor<F>,
    lambda: f64,
    x_kernel: &KernelSpec,
    z_kernel: &KernelSpec,
    epsilon: f64,
) -> Result<(f64, Tensor<F>)> {
    if lambda < 0.0 {
        return Err(Error::Parameter(format!(
            "regularization strength must be nonnegative, got {lambda}"
        )));
    }
    let (base_loss, base_grad) = base;
    if lambda == 0.0 {
        return Ok((base_loss, base_grad));
    }
    if base_grad.shape() != z.shape() {
        return Err(Error::Dimension(format!(
            "base gradient shape {:?} does not match z {:?}",
            base_grad.shape(),
            z.shape()
        )));
    }
    let (penalty, pgrad) = nhsic_penalty(z, x_batch, x_kernel, z_kernel, epsilon)?;
    let lam = F::from_f64(lambda);
    let mut grad = base_grad;
    for (g, p) in grad.data_mut().iter_mut().zip(pgrad.data()) {
        *g -= lam * *p;
    }
    Ok((base_loss - lambda * penalty, grad))
}

/// Flattens a batch to a sample-by-feature f64 matrix, pooling wide
/// representations down to at most 2048 features.
pub fn pooled_matrix<F: Real>(batch: &Tensor<F>) -> Result<Matrix> {
    let m = batch.batch();
    let sample_shape = &batch.shape()[1..];
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(m);
    for i in 0..m {
        let row: Vec<f64> = batch.sample(i).iter().map(|v| v.to_f64()).collect();
        rows.push(pool_features(sample_shape, &row, 2048));
    }
    let d = rows[0].len();
    let mut data = Vec::with_capacity(m * d);
    for row in rows {
        data.extend(row);
    }
    Matrix::from_vec(m, d, data)
}
