//! Experiment execution: end-to-end, simultaneous and sequential layer-wise,
//! retrain-from-layer, forward-forward, and forward-gradient training loops.

mod backprop;
mod forward_forward;
mod forward_gradient;
pub mod optim;

pub use forward_forward::{ff_normalized_streams, ff_predict, FfLabelEmbed, FfMixLocation};
pub use optim::{OptimizerSpec, OptimizerState, Schedule};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analysis::{EvalSet, InfoPlaneSettings, Trajectory};
use crate::data::{AugmentConfig, Dataset, PrototypeSource};
use crate::error::{Error, Result};
use crate::label::ClassLabel;
use crate::losses::{accuracy, cross_entropy, LossSpec};
use crate::nn::{derive_seed, Network};
use crate::tensor::Tensor32;

/// Training mode.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainMode {
    /// One loss at the network output, full backpropagation.
    E2E,
    /// Every module optimizes its own local loss each batch, one forward
    /// pass per batch.
    LayerwiseSimultaneous,
    /// Module `l` is trained to completion with everything before it frozen,
    /// then the next module starts.
    LayerwiseSequential { epochs_per_layer: usize },
    /// Modules before the boundary stay frozen at their current values;
    /// modules from the boundary on are re-initialized and trained
    /// end-to-end.
    RetrainFromLayer { boundary: usize },
    /// Goodness-based per-layer training on correct/incorrect label pairs.
    ForwardForward { label_embed: FfLabelEmbed, mix_location: FfMixLocation },
    /// Single end-to-end loss optimized along random forward-mode
    /// directions, no backward pass.
    ForwardGradient,
}

/// Full experiment description.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// Local (or end-to-end) loss; shared by every module unless
    /// `per_module_losses` is set.
    pub loss: LossSpec,
    pub per_module_losses: Option<Vec<LossSpec>>,
    pub optimizer: OptimizerSpec,
    pub schedule: Schedule,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
    /// Epochs between information-plane snapshots; `None` disables
    /// recording.
    pub record_every: Option<usize>,
    /// Size of the fixed train-set prefix used for recording, and the
    /// per-estimate batch size.
    pub eval_subset: usize,
    pub eval_batch: usize,
    /// Augmentation policy for pair-based losses.
    pub augment: AugmentConfig,
    /// Prototype construction for signal-propagation and forward-forward
    /// label embedding.
    pub prototypes: PrototypeSource,
    /// Samples used for per-epoch train metrics (test metrics use the full
    /// test split).
    pub metrics_subset: usize,
}

impl TrainConfig {
    pub fn new(mode: TrainMode, loss: LossSpec, optimizer: OptimizerSpec, epochs: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            mode,
            loss,
            per_module_losses: None,
            optimizer,
            schedule: Schedule::none(),
            epochs,
            batch_size,
            weight_decay: 0.0,
            seed,
            record_every: None,
            eval_subset: 1024,
            eval_batch: 256,
            augment: AugmentConfig::None,
            prototypes: PrototypeSource::GaussianProjection,
            metrics_subset: 2048,
        }
    }
}

/// Per-epoch metrics. Losses are means over seen batches; accuracies are
/// present only when the network output is class-shaped.
#[derive(Debug, Clone, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: Option<f64>,
    pub test_loss: Option<f64>,
    pub test_accuracy: Option<f64>,
}

/// Everything a run produces besides the trained parameters.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    pub final_train_accuracy: Option<f64>,
    pub final_test_accuracy: Option<f64>,
    pub trajectory: Option<Trajectory>,
    pub wall_clock_secs: f64,
}

impl TrainReport {
    fn empty() -> Self {
        Self {
            epochs: Vec::new(),
            final_train_accuracy: None,
            final_test_accuracy: None,
            trajectory: None,
            wall_clock_secs: 0.0,
        }
    }
}

/// Validates a config against a network and dataset, then dispatches on the
/// training mode. The trainer owns the stop-gradient flags: layer-wise modes
/// set them, end-to-end modes clear them.
pub fn train(
    net: &mut Network<f32>,
    train_data: &Dataset,
    test_data: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<TrainReport> {
    validate_config(net, train_data, config)?;
    let start = std::time::Instant::now();
    let mut report = match &config.mode {
        TrainMode::E2E => {
            net.set_layerwise_detach(false);
            backprop::train_e2e(net, train_data, test_data, config, 0)?
        }
        TrainMode::LayerwiseSimultaneous => {
            net.set_layerwise_detach(true);
            backprop::train_layerwise_simultaneous(net, train_data, test_data, config)?
        }
        TrainMode::LayerwiseSequential { epochs_per_layer } => {
            net.set_layerwise_detach(true);
            backprop::train_layerwise_sequential(net, train_data, test_data, config, *epochs_per_layer)?
        }
        TrainMode::RetrainFromLayer { boundary } => {
            let boundary = *boundary;
            net.reinitialize_from(boundary, derive_seed(config.seed, 0xEE77));
            net.set_layerwise_detach(false);
            if boundary > 0 {
                net.modules[boundary].detach_input = true;
            }
            backprop::train_e2e(net, train_data, test_data, config, boundary)?
        }
        TrainMode::ForwardForward { .. } => forward_forward::train_forward_forward(net, train_data, test_data, config)?,
        TrainMode::ForwardGradient => forward_gradient::train_forward_gradient(net, train_data, test_data, config)?,
    };
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

fn validate_config(net: &Network<f32>, data: &Dataset, config: &TrainConfig) -> Result<()> {
    if config.epochs == 0 {
        return Err(Error::Config("epochs must be at least 1".into()));
    }
    if config.batch_size < 2 {
        return Err(Error::Config("batch size must be at least 2".into()));
    }
    config.schedule.validate()?;
    config.loss.validate()?;
    if let Some(per_module) = &config.per_module_losses {
        if per_module.len() != net.module_count() {
            return Err(Error::Config(format!(
                "{} per-module losses for {} modules",
                per_module.len(),
                net.module_count()
            )));
        }
        for l in per_module {
            l.validate()?;
        }
    }
    match &config.mode {
        TrainMode::RetrainFromLayer { boundary } => {
            if *boundary >= net.module_count() {
                return Err(Error::Config(format!(
                    "retrain boundary {boundary} outside the {} modules",
                    net.module_count()
                )));
            }
        }
        TrainMode::LayerwiseSequential { epochs_per_layer } => {
            if *epochs_per_layer == 0 {
                return Err(Error::Config("epochs per layer must be at least 1".into()));
            }
        }
        TrainMode::ForwardForward { .. } => {
            if data.class_count < 2 {
                return Err(Error::Config("forward-forward needs at least 2 classes".into()));
            }
        }
        _ => {}
    }
    // Loss/mode and loss/head pairing.
    let losses = resolved_losses(net, config);
    for (mi, spec) in losses.iter().enumerate() {
        match spec {
            LossSpec::SoftNn { .. } => {
                return Err(Error::Config(
                    "soft nearest neighbor loss is analysis-only and returns no gradient".into(),
                ))
            }
            LossSpec::FfGoodness { .. } if !matches!(config.mode, TrainMode::ForwardForward { .. }) => {
                return Err(Error::Config(
                    "goodness loss is only usable in forward-forward mode".into(),
                ))
            }
            LossSpec::SignalProp(_)
                if matches!(config.mode, TrainMode::E2E | TrainMode::RetrainFromLayer { .. } | TrainMode::ForwardGradient) =>
            {
                return Err(Error::Config(
                    "signal propagation is a layer-wise loss".into(),
                ))
            }
            _ => {}
        }
        if let Some(required) = spec.required_head_dim(data.class_count) {
            let applies = match config.mode {
                TrainMode::E2E | TrainMode::RetrainFromLayer { .. } | TrainMode::ForwardGradient => {
                    mi == net.module_count() - 1
                }
                _ => true,
            };
            if applies {
                let shape = module_head_dim(net, mi)?;
                if shape != required {
                    return Err(Error::Config(format!(
                        "module {mi} head produces {shape} values but the loss needs {required}"
                    )));
                }
            }
        }
    }
    if matches!(config.mode, TrainMode::ForwardGradient)
        && !matches!(config.loss, LossSpec::CrossEntropy)
    {
        return Err(Error::Config(
            "forward-gradient training optimizes a single cross-entropy loss".into(),
        ));
    }
    Ok(())
}

fn module_head_dim(net: &Network<f32>, mi: usize) -> Result<usize> {
    // Head output dims are static; probe them through shape inference.
    let mut shape = net.input_shape().to_vec();
    for (i, module) in net.modules.iter().enumerate() {
        for layer in &module.layers {
            shape = layer.output_shape(&shape)?;
        }
        if i == mi {
            let out = module.head.output_shape(&shape)?;
            return Ok(out.iter().product());
        }
    }
    Err(Error::State(format!("module {mi} out of range")))
}

/// The loss assigned to each module.
pub(crate) fn resolved_losses(net: &Network<f32>, config: &TrainConfig) -> Vec<LossSpec> {
    match &config.per_module_losses {
        Some(per) => per.clone(),
        None => vec![config.loss.clone(); net.module_count()],
    }
}

/// Seeded epoch shuffle, shared by every training loop.
pub(crate) fn epoch_batches(
    n: usize,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Vec<Vec<usize>> {
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5000 + epoch as u64));
    indices.shuffle(&mut rng);
    let mut batches: Vec<Vec<usize>> = indices
        .chunks(batch_size)
        .map(|c| c.to_vec())
        .collect();
    // Batches of one sample break pair- and Gram-based losses.
    if batches.last().map(|b| b.len()) == Some(1) {
        batches.pop();
    }
    batches
}

/// Evaluates classification metrics when the network emits class scores.
pub(crate) fn classifier_metrics(
    net: &Network<f32>,
    inputs: &Tensor32,
    labels: &[ClassLabel],
    class_count: usize,
    batch_size: usize,
) -> Result<Option<(f64, f64)>> {
    let n = inputs.batch();
    let mut total_loss = 0.0f64;
    let mut total_acc = 0.0f64;
    let mut seen = 0usize;
    let mut start = 0usize;
    while start < n {
        let end = (start + batch_size).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let (batch, batch_labels) = gather_rows(inputs, labels, &idx);
        let out = net.forward_e2e_output(&batch)?;
        if out.sample_len() != class_count {
            return Ok(None);
        }
        let (loss, _) = cross_entropy(&out, &batch_labels)?;
        let acc = accuracy(&out, &batch_labels);
        let w = idx.len();
        total_loss += loss * w as f64;
        total_acc += acc * w as f64;
        seen += w;
        start = end;
    }
    Ok(Some((total_loss / seen as f64, total_acc / seen as f64)))
}

pub(crate) fn gather_rows(
    inputs: &Tensor32,
    labels: &[ClassLabel],
    idx: &[usize],
) -> (Tensor32, Vec<ClassLabel>) {
    let sample = inputs.sample_len();
    let mut data = Vec::with_capacity(idx.len() * sample);
    let mut out_labels = Vec::with_capacity(idx.len());
    for &i in idx {
        data.extend_from_slice(inputs.sample(i));
        out_labels.push(labels[i]);
    }
    let mut shape = vec![idx.len()];
    shape.extend_from_slice(&inputs.shape()[1..]);
    (
        Tensor32::new(shape, data).expect("gather shape consistent"),
        out_labels,
    )
}

/// Records one info-plane snapshot into the trajectory when the cadence says
/// so. Epoch 0 is the pre-training state.
pub(crate) fn maybe_record(
    trajectory: &mut Option<Trajectory>,
    net: &Network<f32>,
    data: &Dataset,
    config: &TrainConfig,
    epoch: usize,
) -> Result<()> {
    let Some(every) = config.record_every else {
        return Ok(());
    };
    if every == 0 {
        return Err(Error::Config("record_every must be positive".into()));
    }
    if epoch % every != 0 {
        return Ok(());
    }
    let traj = trajectory.get_or_insert_with(|| {
        Trajectory::new(
            InfoPlaneSettings::default(),
            config.eval_subset,
            config.seed,
        )
    });
    let (inputs, labels) = data.head(config.eval_subset);
    let points = crate::analysis::record_info_plane(
        net,
        &inputs,
        &labels,
        data.class_count,
        config.eval_batch,
        &traj.settings,
        EvalSet::TrainSubset,
        epoch,
    )?;
    traj.extend(points)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_are_deterministic_and_cover() {
        let a = epoch_batches(10, 5, 7, 2);
        let b = epoch_batches(10, 5, 7, 2);
        assert_eq!(a, b);
        let mut seen: Vec<usize> = a.iter().flatten().copied().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn singleton_tail_batch_is_dropped() {
        let batches = epoch_batches(7, 3, 1, 0);
        assert!(batches.iter().all(|b| b.len() >= 2));
        let total: usize = batches.iter().map(|b| b.len()).sum();
        assert_eq!(total, 6);
    }
}
