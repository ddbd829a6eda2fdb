//! Forward-gradient training: one forward-mode directional derivative per
//! batch along a random direction, no backward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::cross_entropy;
use crate::nn::{derive_seed, Network};
use crate::tensor::Tensor32;
use crate::train::optim::OptimizerState;
use crate::train::{
    classifier_metrics, epoch_batches, EpochMetrics, TrainConfig, TrainReport,
};

/// Samples a standard-normal direction over the end-to-end parameters.
pub fn sample_direction(count: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    (0..count)
        .map(|_| {
            let g: f64 = StandardNormal.sample(rng);
            g as f32
        })
        .collect()
}

/// Loss value and its directional derivative along `direction`, by
/// forward-mode dual propagation (no finite differences).
pub fn loss_and_jvp(
    net: &Network<f32>,
    batch: &Tensor32,
    labels: &[crate::label::ClassLabel],
    direction: &[f32],
) -> Result<(f64, f64)> {
    let (value, tangent) = net.forward_jvp(batch, direction)?;
    let (loss, grad) = cross_entropy(&value, labels)?;
    let jvp: f64 = grad
        .data()
        .iter()
        .zip(tangent.data())
        .map(|(g, t)| (*g as f64) * (*t as f64))
        .sum();
    Ok((loss, jvp))
}

/// Per batch: draw one direction, estimate the gradient as `jvp * direction`,
/// and feed that estimate to the configured optimizer.
pub(crate) fn train_forward_gradient(
    net: &mut Network<f32>,
    train_data: &Dataset,
    test_data: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<TrainReport> {
    net.set_layerwise_detach(false);
    let param_count = net.e2e_param_count();
    if param_count == 0 {
        return Err(Error::Config("network has no trainable parameters".into()));
    }
    let active = 0..net.module_count();
    let mut opt = OptimizerState::new(config.optimizer);
    let mut report = TrainReport::empty();
    let mut dir_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0xF06d));

    for epoch in 0..config.epochs {
        let lr_mult = config.schedule.multiplier(epoch);
        let mut loss_sum = 0.0f64;
        let mut seen = 0usize;
        for (bi, batch_idx) in epoch_batches(train_data.len(), config.batch_size, config.seed, epoch)
            .iter()
            .enumerate()
        {
            let (inputs, labels) = train_data.gather(batch_idx);
            let direction = sample_direction(param_count, &mut dir_rng);
            let (loss, jvp) = loss_and_jvp(net, &inputs, &labels, &direction)?;
            let mut grads = net.zero_grads();
            net.scatter_e2e_direction(&direction, jvp as f32, &mut grads)?;
            opt.step(net, &grads, lr_mult, config.weight_decay, active.clone())
                .map_err(|e| Error::Numeric(format!("epoch {epoch} batch {bi}: {e}")))?;
            loss_sum += loss * labels.len() as f64;
            seen += labels.len();
        }
        let (tr_in, tr_labels) = train_data.head(config.metrics_subset);
        let train_accuracy =
            classifier_metrics(net, &tr_in, &tr_labels, train_data.class_count, 512)?
                .map(|(_, a)| a);
        let (test_loss, test_accuracy) = match test_data {
            Some(t) => match classifier_metrics(net, &t.inputs, &t.labels, t.class_count, 512)? {
                Some((l, a)) => (Some(l), Some(a)),
                None => (None, None),
            },
            None => (None, None),
        };
        report.epochs.push(EpochMetrics {
            epoch: epoch + 1,
            train_loss: loss_sum / seen.max(1) as f64,
            train_accuracy,
            test_loss,
            test_accuracy,
        });
    }
    report.final_train_accuracy = report.epochs.last().and_then(|e| e.train_accuracy);
    report.final_test_accuracy = report.epochs.last().and_then(|e| e.test_accuracy);
    Ok(report)
}
