//! Per-layer normalized-dependence snapshots over a fixed evaluation subset.

use crate::analysis::{EvalSet, InfoPlanePoint, InfoPlaneSettings};
use crate::error::{Error, Result};
use crate::hsic::{compute_gram, nhsic_empirical};
use crate::label::{one_hot_rows, ClassLabel};
use crate::linalg::{KahanSum, Matrix};
use crate::losses::pooled_matrix;
use crate::nn::Network;
use crate::tensor::Tensor32;

/// Records one information-plane point per module: the mean over evaluation
/// batches of the normalized dependence of each representation with the
/// input and with the one-hot labels. The network is read-only; parameters
/// are untouched.
#[allow(clippy::too_many_arguments)]
pub fn record_info_plane(
    net: &Network<f32>,
    inputs: &Tensor32,
    labels: &[ClassLabel],
    class_count: usize,
    batch_size: usize,
    settings: &InfoPlaneSettings,
    eval_set: EvalSet,
    epoch: usize,
) -> Result<Vec<InfoPlanePoint>> {
    let n = inputs.batch();
    if n < 2 {
        return Err(Error::Sample(format!(
            "info-plane recording needs at least 2 samples, got {n}"
        )));
    }
    if batch_size < 2 {
        return Err(Error::Config("evaluation batch size must be at least 2".into()));
    }
    let modules = net.module_count();
    let mut xz = vec![KahanSum::new(); modules];
    let mut yz = vec![KahanSum::new(); modules];
    let mut batches = 0usize;

    let mut start = 0usize;
    while start < n {
        let end = (start + batch_size).min(n);
        if end - start < 2 {
            break;
        }
        let idx: Vec<usize> = (start..end).collect();
        let (batch, batch_labels) = gather(inputs, labels, &idx);
        let trace = net.forward_full(&batch)?;

        let x_mat = pooled_matrix(&batch)?;
        let y_mat = Matrix::from_vec(
            idx.len(),
            class_count,
            one_hot_rows(&batch_labels, class_count),
        )?;
        let kx = compute_gram(&x_mat, &settings.kernels.x)?;
        let ky = compute_gram(&y_mat, &settings.kernels.y)?;
        for l in 0..modules {
            let z_mat = pooled_matrix(trace.representation(l))?;
            let kz = compute_gram(&z_mat, &settings.kernels.z)?;
            xz[l].add(nhsic_empirical(&kx, &kz, settings.epsilon)?.value);
            yz[l].add(nhsic_empirical(&ky, &kz, settings.epsilon)?.value);
        }
        batches += 1;
        start = end;
    }
    if batches == 0 {
        return Err(Error::Sample("no evaluation batches of at least 2 samples".into()));
    }
    Ok((0..modules)
        .map(|l| InfoPlanePoint {
            epoch,
            layer: l,
            nhsic_xz: xz[l].value() / batches as f64,
            nhsic_yz: yz[l].value() / batches as f64,
            eval_set,
        })
        .collect())
}

fn gather(inputs: &Tensor32, labels: &[ClassLabel], idx: &[usize]) -> (Tensor32, Vec<ClassLabel>) {
    let sample = inputs.sample_len();
    let mut data = Vec::with_capacity(idx.len() * sample);
    let mut out = Vec::with_capacity(idx.len());
    for &i in idx {
        data.extend_from_slice(inputs.sample(i));
        out.push(labels[i]);
    }
    let mut shape = vec![idx.len()];
    shape.extend_from_slice(&inputs.shape()[1..]);
    (Tensor32::new(shape, data).expect("gather consistent"), out)
}
