//! Gram-matrix construction and empirical dependence estimators.
//!
//! Two estimators are exposed: the biased V-statistic
//! `Tr(K H L H) / (m-1)^2`, and its normalized variant
//! `Tr[K H (K H + eps*m*I)^-1 L H (L H + eps*m*I)^-1]`, both evaluated on
//! mini-batches and averaged rather than pooled into one large Gram matrix.
//! Gram matrices are built in f64 even when activations are f32; the small
//! regularizer interacts badly with 32-bit rounding.

use crate::error::{Error, Result};
use crate::linalg::{center_gram, solve_regularized, trace_product, KahanSum, Matrix};

/// Kernel family plus bandwidth policy for the RBF case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    /// `k(v, w) = exp(-||v - w||^2 / (2 sigma^2))`.
    Rbf(BandwidthRule),
    /// Plain dot product; used for one-hot labels.
    Linear,
}

/// How the RBF bandwidth is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthRule {
    FixedSigma(f64),
    /// `sigma = 5 * sqrt(d)` where `d` is the feature dimension.
    FiveSqrtD,
}

impl KernelSpec {
    pub fn rbf_five_sqrt_d() -> Self {
        KernelSpec::Rbf(BandwidthRule::FiveSqrtD)
    }

    pub fn rbf_fixed(sigma: f64) -> Self {
        KernelSpec::Rbf(BandwidthRule::FixedSigma(sigma))
    }

    /// Resolves the bandwidth for feature dimension `d`.
    pub fn sigma(&self, d: usize) -> Result<Option<f64>> {
        match self {
            KernelSpec::Linear => Ok(None),
            KernelSpec::Rbf(BandwidthRule::FixedSigma(s)) => {
                if *s > 0.0 {
                    Ok(Some(*s))
                } else {
                    Err(Error::Parameter(format!("RBF sigma must be positive, got {s}")))
                }
            }
            KernelSpec::Rbf(BandwidthRule::FiveSqrtD) => {
                if d == 0 {
                    return Err(Error::Parameter(
                        "FiveSqrtD bandwidth needs feature dimension >= 1".into(),
                    ));
                }
                Ok(Some(5.0 * (d as f64).sqrt()))
            }
        }
    }
}

/// Which estimator produced a value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EstimatorKind {
    BiasedHsic,
    RegularizedNhsic { epsilon: f64 },
}

/// A dependence estimate together with its provenance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HsicEstimate {
    pub value: f64,
    pub sample_count: usize,
    pub estimator: EstimatorKind,
}

/// Default regularizer for the normalized estimator.
pub const DEFAULT_NHSIC_EPSILON: f64 = 1e-5;

/// Builds the `m x m` Gram matrix of `points` (rows are samples).
pub fn compute_gram(points: &Matrix, spec: &KernelSpec) -> Result<Matrix> {
    let m = points.rows();
    let d = points.cols();
    if m < 2 {
        return Err(Error::Sample(format!(
            "need at least 2 samples for a Gram matrix, got {m}"
        )));
    }
    let mut gram = Matrix::zeros(m, m);
    match spec {
        KernelSpec::Linear => {
            for i in 0..m {
                let ri = points.row(i);
                for j in i..m {
                    let rj = points.row(j);
                    let dot: f64 = ri.iter().zip(rj).map(|(a, b)| a * b).sum();
                    gram.set(i, j, dot);
                    gram.set(j, i, dot);
                }
            }
        }
        KernelSpec::Rbf(_) => {
            let sigma = spec.sigma(d)?.expect("rbf always has a bandwidth");
            let denom = 2.0 * sigma * sigma;
            for i in 0..m {
                gram.set(i, i, 1.0);
                let ri = points.row(i);
                for j in (i + 1)..m {
                    let rj = points.row(j);
                    let sq: f64 = ri.iter().zip(rj).map(|(a, b)| (a - b) * (a - b)).sum();
                    let v = (-sq / denom).exp();
                    gram.set(i, j, v);
                    gram.set(j, i, v);
                }
            }
        }
    }
    Ok(gram)
}

fn check_gram_pair(k: &Matrix, l: &Matrix) -> Result<usize> {
    if !k.is_square() || !l.is_square() || k.rows() != l.rows() {
        return Err(Error::Dimension(format!(
            "Gram matrices must be square and equally sized, got {}x{} and {}x{}",
            k.rows(),
            k.cols(),
            l.rows(),
            l.cols()
        )));
    }
    let m = k.rows();
    if m < 2 {
        return Err(Error::Sample(format!("need at least 2 samples, got {m}")));
    }
    Ok(m)
}

/// Biased empirical estimator `Tr(K H L H) / (m-1)^2`.
pub fn hsic_empirical(k: &Matrix, l: &Matrix) -> Result<HsicEstimate> {
    let m = check_gram_pair(k, l)?;
    let centered_l = center_gram(l)?;
    let trace = trace_product(k, &centered_l)?;
    let denom = ((m - 1) as f64) * ((m - 1) as f64);
    Ok(HsicEstimate {
        value: trace / denom,
        sample_count: m,
        estimator: EstimatorKind::BiasedHsic,
    })
}

/// The two regularized resolvent factors of the normalized estimator.
///
/// `K H (K H + eps*m*I)^-1` is computed as `I - eps*m*(K H + eps*m*I)^-1`,
/// which is the same operator without the extra matrix product.
fn nhsic_factor(gram: &Matrix, epsilon: f64) -> Result<Matrix> {
    let m = gram.rows();
    let kh = right_center(gram);
    let inv = solve_regularized(&kh, &Matrix::identity(m), epsilon).map_err(|e| match e {
        Error::Numeric(msg) => Error::Numeric(format!(
            "normalized estimator solve failed (m={m}, eps={epsilon}): {msg}"
        )),
        other => other,
    })?;
    let scale = epsilon * m as f64;
    let mut factor = Matrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            let id = if i == j { 1.0 } else { 0.0 };
            factor.set(i, j, id - scale * inv.get(i, j));
        }
    }
    Ok(factor)
}

/// `G H` for the centering matrix `H = I - (1/m) 11^T`: subtract each row's mean.
fn right_center(g: &Matrix) -> Matrix {
    let m = g.rows();
    let mf = m as f64;
    let mut out = Matrix::zeros(m, g.cols());
    for i in 0..m {
        let row = g.row(i);
        let mean: f64 = row.iter().sum::<f64>() / mf;
        for (j, &v) in row.iter().enumerate() {
            out.set(i, j, v - mean);
        }
    }
    out
}

/// `H G`: subtract each column's mean.
fn left_center(g: &Matrix) -> Matrix {
    let rows = g.rows();
    let cols = g.cols();
    let mut col_mean = vec![0.0f64; cols];
    for i in 0..rows {
        for (j, &v) in g.row(i).iter().enumerate() {
            col_mean[j] += v;
        }
    }
    for cm in &mut col_mean {
        *cm /= rows as f64;
    }
    let mut out = Matrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            out.set(i, j, g.get(i, j) - col_mean[j]);
        }
    }
    out
}

/// Normalized empirical estimator
/// `Tr[K H (K H + eps*m*I)^-1 L H (L H + eps*m*I)^-1]`.
pub fn nhsic_empirical(k: &Matrix, l: &Matrix, epsilon: f64) -> Result<HsicEstimate> {
    let m = check_gram_pair(k, l)?;
    if !(epsilon > 0.0) {
        return Err(Error::Parameter(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let fk = nhsic_factor(k, epsilon)?;
    let fl = nhsic_factor(l, epsilon)?;
    let value = trace_product(&fk, &fl)?;
    if !value.is_finite() {
        return Err(Error::Numeric("normalized estimate is non-finite".into()));
    }
    Ok(HsicEstimate {
        value,
        sample_count: m,
        estimator: EstimatorKind::RegularizedNhsic { epsilon },
    })
}

/// One mini-batch of points for the three variables, rows are samples.
#[derive(Debug, Clone)]
pub struct VariableBatch {
    pub x: Matrix,
    pub z: Matrix,
    pub y: Matrix,
}

/// Kernel choice per variable.
#[derive(Debug, Clone, Copy)]
pub struct VariableKernels {
    pub x: KernelSpec,
    pub z: KernelSpec,
    pub y: KernelSpec,
}

impl Default for VariableKernels {
    fn default() -> Self {
        Self {
            x: KernelSpec::rbf_five_sqrt_d(),
            z: KernelSpec::rbf_five_sqrt_d(),
            y: KernelSpec::Linear,
        }
    }
}

/// Mean of per-batch normalized estimates for (X, Z) and (Y, Z).
///
/// Batch estimates are averaged, never pooled into a single Gram matrix, so
/// memory stays quadratic in the batch size only.
pub fn nhsic_minibatch_mean(
    batches: &[VariableBatch],
    kernels: &VariableKernels,
    epsilon: f64,
) -> Result<(f64, f64)> {
    if batches.is_empty() {
        return Err(Error::Sample("need at least one batch".into()));
    }
    let mut xz = KahanSum::new();
    let mut yz = KahanSum::new();
    for batch in batches {
        let m = batch.x.rows();
        if batch.z.rows() != m || batch.y.rows() != m {
            return Err(Error::Sample(format!(
                "batch sample counts differ: x={}, z={}, y={}",
                batch.x.rows(),
                batch.z.rows(),
                batch.y.rows()
            )));
        }
        let kx = compute_gram(&batch.x, &kernels.x)?;
        let kz = compute_gram(&batch.z, &kernels.z)?;
        let ky = compute_gram(&batch.y, &kernels.y)?;
        xz.add(nhsic_empirical(&kx, &kz, epsilon)?.value);
        yz.add(nhsic_empirical(&ky, &kz, epsilon)?.value);
    }
    let n = batches.len() as f64;
    Ok((xz.value() / n, yz.value() / n))
}

/// Normalized dependence between fixed points `x` and trainable points `z`,
/// together with its gradient with respect to every row of `z`.
///
/// Only the `z` side is differentiated; the `x`-side factor is a constant of
/// the optimization. Supports RBF and linear kernels on `z`.
pub fn nhsic_with_gradient(
    x: &Matrix,
    z: &Matrix,
    x_kernel: &KernelSpec,
    z_kernel: &KernelSpec,
    epsilon: f64,
) -> Result<(f64, Matrix)> {
    let m = z.rows();
    if x.rows() != m {
        return Err(Error::Sample(format!(
            "x has {} rows but z has {m}",
            x.rows()
        )));
    }
    let kx = compute_gram(x, x_kernel)?;
    let kz = compute_gram(z, z_kernel)?;
    let fx = nhsic_factor(&kx, epsilon)?; // constant side
    let fz = nhsic_factor(&kz, epsilon)?;
    let value = trace_product(&fx, &fz)?;

    // d Tr[A B] / d L for B = I - eps*m*(L H + eps*m*I)^-1 is
    // eps*m * (H S^-1 A S^-1)^T with S = L H + eps*m*I.
    let lh = right_center(&kz);
    let s_inv_a = solve_regularized(&lh, &fx, epsilon)?;
    let lh_t = lh.transpose();
    let x2 = solve_regularized(&lh_t, &s_inv_a.transpose(), epsilon)?.transpose();
    let h_x2 = left_center(&x2);
    let scale = epsilon * m as f64;
    // grad_l[i][j] = scale * h_x2[j][i]
    let grad_l = {
        let mut g = h_x2.transpose();
        for v in g.data_mut() {
            *v *= scale;
        }
        g
    };

    // Chain through the Gram matrix of z.
    let d = z.cols();
    let mut grad_z = Matrix::zeros(m, d);
    match z_kernel {
        KernelSpec::Rbf(_) => {
            let sigma = z_kernel.sigma(d)?.expect("rbf bandwidth");
            let inv_sq = 1.0 / (sigma * sigma);
            for i in 0..m {
                for j in 0..m {
                    if i == j {
                        continue;
                    }
                    let w = (grad_l.get(i, j) + grad_l.get(j, i)) * kz.get(i, j) * inv_sq;
                    if w == 0.0 {
                        continue;
                    }
                    let zi = z.row(i);
                    let zj = z.row(j);
                    for c in 0..d {
                        let v = grad_z.get(i, c) + w * (zj[c] - zi[c]);
                        grad_z.set(i, c, v);
                    }
                }
            }
        }
        KernelSpec::Linear => {
            for i in 0..m {
                for j in 0..m {
                    let w = if i == j {
                        2.0 * grad_l.get(i, i)
                    } else {
                        grad_l.get(i, j) + grad_l.get(j, i)
                    };
                    if w == 0.0 {
                        continue;
                    }
                    let zj = z.row(j);
                    for c in 0..d {
                        let v = grad_z.get(i, c) + w * zj[c];
                        grad_z.set(i, c, v);
                    }
                }
            }
        }
    }
    Ok((value, grad_z))
}

/// Flattens a per-sample feature block and average-pools it down to at most
/// `max_features` features.
///
/// Spatial blocks (`channels x h x w`) are pooled 2x2 with floor semantics
/// until they fit; flat vectors are pooled over contiguous chunks.
pub fn pool_features(sample_shape: &[usize], data: &[f64], max_features: usize) -> Vec<f64> {
    let flat: usize = sample_shape.iter().product();
    debug_assert_eq!(flat, data.len());
    if flat <= max_features {
        return data.to_vec();
    }
    if sample_shape.len() == 3 {
        let (c, mut h, mut w) = (sample_shape[0], sample_shape[1], sample_shape[2]);
        let mut cur = data.to_vec();
        while c * h * w > max_features && h > 1 && w > 1 {
            let nh = h / 2;
            let nw = w / 2;
            let mut next = vec![0.0f64; c * nh * nw];
            for ch in 0..c {
                for i in 0..nh {
                    for j in 0..nw {
                        let mut s = 0.0;
                        for di in 0..2 {
                            for dj in 0..2 {
                                s += cur[ch * h * w + (2 * i + di) * w + (2 * j + dj)];
                            }
                        }
                        next[ch * nh * nw + i * nw + j] = s / 4.0;
                    }
                }
            }
            cur = next;
            h = nh;
            w = nw;
        }
        if c * h * w <= max_features {
            return cur;
        }
        return pool_flat(&cur, max_features);
    }
    pool_flat(data, max_features)
}

fn pool_flat(data: &[f64], max_features: usize) -> Vec<f64> {
    let n = data.len();
    let group = n.div_ceil(max_features);
    data.chunks(group)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect()
}
