//! Gradient-descent training loops: end-to-end, simultaneous layer-wise,
//! and sequential layer-wise.

use crate::analysis::Trajectory;
use crate::data::{augment_batch, Dataset, PrototypeSet};
use crate::error::{Error, Result};
use crate::label::ClassLabel;
use crate::losses::{
    cross_entropy, hsic_augmented_local_loss, signal_propagation_loss, similarity_matching_loss,
    supcon_loss, LossSpec,
};
use crate::nn::{derive_seed, ForwardTrace, LocalGrad, Network};
use crate::tensor::{Tensor, Tensor32};
use crate::train::optim::OptimizerState;
use crate::train::{
    classifier_metrics, epoch_batches, maybe_record, resolved_losses, EpochMetrics, TrainConfig,
    TrainReport,
};

/// Evaluates one module's local loss on a cached forward pass.
///
/// `signal` carries the forwarded label signal for signal-propagation
/// losses: the prototype batch itself for module 0, and the previous
/// module's signal representation afterwards.
fn local_loss(
    spec: &LossSpec,
    trace: &ForwardTrace<f32>,
    module_idx: usize,
    x_batch: &Tensor32,
    signal: Option<(&Tensor32, &ForwardTrace<f32>)>,
    labels: &[ClassLabel],
    class_count: usize,
) -> Result<(f64, LocalGrad<f32>)> {
    match spec {
        LossSpec::CrossEntropy => {
            let (loss, grad) = cross_entropy(trace.aux_output(module_idx), labels)?;
            Ok((loss, LocalGrad::at_head(grad)))
        }
        LossSpec::SupCon { tau, normalize } => {
            let h = trace.aux_output(module_idx).flattened_2d();
            let (loss, grad) = supcon_loss(&h, labels, *tau, *normalize)?;
            let grad = grad.reshaped(trace.aux_output(module_idx).shape())?;
            Ok((loss, LocalGrad::at_head(grad)))
        }
        LossSpec::SimMatch => {
            let h = trace.aux_output(module_idx).flattened_2d();
            let result = similarity_matching_loss(&h, labels, class_count)?;
            let grad = result.grad.reshaped(trace.aux_output(module_idx).shape())?;
            Ok((result.loss, LocalGrad::at_head(grad)))
        }
        LossSpec::SignalProp(mode) => {
            let (s_input, s_trace) = signal.ok_or_else(|| {
                Error::State("signal propagation needs a forwarded signal".into())
            })?;
            let z = trace.representation(module_idx).flattened_2d();
            let s_prev = if module_idx == 0 {
                s_input.flattened_2d()
            } else {
                s_trace.representation(module_idx - 1).flattened_2d()
            };
            let (loss, grad) = signal_propagation_loss(&z, &s_prev, *mode)?;
            let grad = grad.reshaped(trace.representation(module_idx).shape())?;
            Ok((loss, LocalGrad::at_z(grad)))
        }
        LossSpec::HsicAugmented { base, lambda, kernel, epsilon } => {
            let (base_loss, base_local) =
                local_loss(base, trace, module_idx, x_batch, signal, labels, class_count)?;
            let z = trace.representation(module_idx).flattened_2d();
            let zero = Tensor::zeros(z.shape());
            let base_at_z = match &base_local.at_z {
                Some(g) => g.flattened_2d(),
                None => zero,
            };
            let (loss, at_z) = hsic_augmented_local_loss(
                (base_loss, base_at_z),
                &z,
                &x_batch.flattened_2d(),
                *lambda,
                kernel,
                kernel,
                *epsilon,
            )?;
            let at_z = at_z.reshaped(trace.representation(module_idx).shape())?;
            Ok((
                loss,
                LocalGrad { at_head: base_local.at_head, at_z: Some(at_z) },
            ))
        }
        LossSpec::FfGoodness { .. } | LossSpec::SoftNn { .. } => Err(Error::Config(
            "loss family not usable in gradient-descent modes".into(),
        )),
    }
}

/// Whether the assigned losses need the two-view pairing guarantee.
fn needs_pairs(losses: &[LossSpec]) -> bool {
    losses.iter().any(|l| match l {
        LossSpec::SupCon { .. } => true,
        LossSpec::HsicAugmented { base, .. } => matches!(**base, LossSpec::SupCon { .. }),
        _ => false,
    })
}

fn needs_signal(losses: &[LossSpec]) -> bool {
    losses.iter().any(|l| match l {
        LossSpec::SignalProp(_) => true,
        LossSpec::HsicAugmented { base, .. } => matches!(**base, LossSpec::SignalProp(_)),
        _ => false,
    })
}

fn prototype_batch(protos: &PrototypeSet, labels: &[ClassLabel]) -> Tensor32 {
    let d: usize = protos.sample_shape.iter().product();
    let mut data = Vec::with_capacity(labels.len() * d);
    for l in labels {
        data.extend_from_slice(protos.for_label(*l));
    }
    let mut shape = vec![labels.len()];
    shape.extend_from_slice(&protos.sample_shape);
    Tensor32::new(shape, data).expect("prototype shapes are consistent")
}

fn epoch_metrics(
    net: &Network<f32>,
    train_data: &Dataset,
    test_data: Option<&Dataset>,
    config: &TrainConfig,
    epoch: usize,
    train_loss: f64,
) -> Result<EpochMetrics> {
    let (tr_in, tr_labels) = train_data.head(config.metrics_subset);
    let train_accuracy = classifier_metrics(net, &tr_in, &tr_labels, train_data.class_count, 512)?
        .map(|(_, acc)| acc);
    let (test_loss, test_accuracy) = match test_data {
        Some(t) => match classifier_metrics(net, &t.inputs, &t.labels, t.class_count, 512)? {
            Some((l, a)) => (Some(l), Some(a)),
            None => (None, None),
        },
        None => (None, None),
    };
    Ok(EpochMetrics { epoch, train_loss, train_accuracy, test_loss, test_accuracy })
}

fn finish_report(
    mut report: TrainReport,
    trajectory: Option<Trajectory>,
) -> TrainReport {
    report.final_train_accuracy = report.epochs.last().and_then(|e| e.train_accuracy);
    report.final_test_accuracy = report.epochs.last().and_then(|e| e.test_accuracy);
    report.trajectory = trajectory;
    report
}

/// End-to-end training: one loss at the last module's head output, stepped
/// over modules `active_from..`. Retrain-from-layer reuses this with a
/// nonzero start.
pub(crate) fn train_e2e(
    net: &mut Network<f32>,
    train_data: &Dataset,
    test_data: Option<&Dataset>,
    config: &TrainConfig,
    active_from: usize,
) -> Result<TrainReport> {
    let losses = resolved_losses(net, config);
    let spec = losses.last().expect("network has modules").clone();
    if matches!(spec, LossSpec::HsicAugmented { .. }) {
        return Err(Error::Config(
            "the dependence-augmented loss is defined for layer-wise modes".into(),
        ));
    }
    let last = net.module_count() - 1;
    let active = active_from..net.module_count();
    let augment = needs_pairs(&losses);
    let mut opt = OptimizerState::new(config.optimizer);
    let mut trajectory = None;
    maybe_record(&mut trajectory, net, train_data, config, 0)?;
    let mut report = TrainReport::empty();

    for epoch in 0..config.epochs {
        let lr_mult = config.schedule.multiplier(epoch);
        let mut loss_sum = 0.0f64;
        let mut seen = 0usize;
        for (bi, batch_idx) in epoch_batches(train_data.len(), config.batch_size, config.seed, epoch)
            .iter()
            .enumerate()
        {
            let (inputs, labels) = train_data.gather(batch_idx);
            let (inputs, labels) = if augment {
                augment_batch(
                    &inputs,
                    &labels,
                    config.augment,
                    derive_seed(config.seed, 0xA000 + (epoch * 65_536 + bi) as u64),
                )?
            } else {
                (inputs, labels)
            };
            let trace = net.forward_full(&inputs)?;
            let (loss, local) =
                local_loss(&spec, &trace, last, &inputs, None, &labels, train_data.class_count)?;
            let gh = local.at_head.ok_or_else(|| {
                Error::Config("end-to-end training needs a head-level loss gradient".into())
            })?;
            let grads = net.backward_e2e(&trace, &gh)?;
            opt.step(net, &grads, lr_mult, config.weight_decay, active.clone())
                .map_err(|e| Error::Numeric(format!("epoch {epoch} batch {bi}: {e}")))?;
            loss_sum += loss * labels.len() as f64;
            seen += labels.len();
        }
        report.epochs.push(epoch_metrics(
            net,
            train_data,
            test_data,
            config,
            epoch + 1,
            loss_sum / seen.max(1) as f64,
        )?);
        maybe_record(&mut trajectory, net, train_data, config, epoch + 1)?;
    }
    Ok(finish_report(report, trajectory))
}

/// Simultaneous layer-wise training: one forward pass per batch, every
/// module's local loss evaluated on its own (detached) input, all modules
/// stepped together.
pub(crate) fn train_layerwise_simultaneous(
    net: &mut Network<f32>,
    train_data: &Dataset,
    test_data: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<TrainReport> {
    let losses = resolved_losses(net, config);
    let augment = needs_pairs(&losses);
    let protos = if needs_signal(&losses) {
        Some(PrototypeSet::build(
            train_data,
            config.prototypes,
            derive_seed(config.seed, 0x9999),
        )?)
    } else {
        None
    };
    let active = 0..net.module_count();
    let mut opt = OptimizerState::new(config.optimizer);
    let mut trajectory = None;
    maybe_record(&mut trajectory, net, train_data, config, 0)?;
    let mut report = TrainReport::empty();

    for epoch in 0..config.epochs {
        let lr_mult = config.schedule.multiplier(epoch);
        let mut loss_sum = 0.0f64;
        let mut seen = 0usize;
        for (bi, batch_idx) in epoch_batches(train_data.len(), config.batch_size, config.seed, epoch)
            .iter()
            .enumerate()
        {
            let (inputs, labels) = train_data.gather(batch_idx);
            let (inputs, labels) = if augment {
                augment_batch(
                    &inputs,
                    &labels,
                    config.augment,
                    derive_seed(config.seed, 0xA000 + (epoch * 65_536 + bi) as u64),
                )?
            } else {
                (inputs, labels)
            };
            let trace = net.forward_full(&inputs)?;
            let signal_pack = match &protos {
                Some(p) => {
                    let s_input = prototype_batch(p, &labels);
                    let s_trace = net.forward_full(&s_input)?;
                    Some((s_input, s_trace))
                }
                None => None,
            };
            let mut locals = Vec::with_capacity(net.module_count());
            let mut batch_loss = 0.0f64;
            for (mi, spec) in losses.iter().enumerate() {
                let (loss, local) = local_loss(
                    spec,
                    &trace,
                    mi,
                    &inputs,
                    signal_pack.as_ref().map(|(s, t)| (s, t)),
                    &labels,
                    train_data.class_count,
                )?;
                batch_loss += loss;
                locals.push(Some(local));
            }
            let grads = net.backward_layerwise(&trace, &locals)?;
            opt.step(net, &grads, lr_mult, config.weight_decay, active.clone())
                .map_err(|e| Error::Numeric(format!("epoch {epoch} batch {bi}: {e}")))?;
            loss_sum += batch_loss * labels.len() as f64;
            seen += labels.len();
        }
        report.epochs.push(epoch_metrics(
            net,
            train_data,
            test_data,
            config,
            epoch + 1,
            loss_sum / seen.max(1) as f64,
        )?);
        maybe_record(&mut trajectory, net, train_data, config, epoch + 1)?;
    }
    Ok(finish_report(report, trajectory))
}

/// Sequential layer-wise training: module `l` is trained for
/// `epochs_per_layer` epochs with everything before it frozen, then the next
/// module begins. Optimizer state is fresh per stage.
pub(crate) fn train_layerwise_sequential(
    net: &mut Network<f32>,
    train_data: &Dataset,
    test_data: Option<&Dataset>,
    config: &TrainConfig,
    epochs_per_layer: usize,
) -> Result<TrainReport> {
    let losses = resolved_losses(net, config);
    let protos = if needs_signal(&losses) {
        Some(PrototypeSet::build(
            train_data,
            config.prototypes,
            derive_seed(config.seed, 0x9999),
        )?)
    } else {
        None
    };
    let augment = needs_pairs(&losses);
    let mut trajectory = None;
    maybe_record(&mut trajectory, net, train_data, config, 0)?;
    let mut report = TrainReport::empty();
    let mut global_epoch = 0usize;

    for stage in 0..net.module_count() {
        let mut opt = OptimizerState::new(config.optimizer);
        let active = stage..stage + 1;
        for epoch in 0..epochs_per_layer {
            let lr_mult = config.schedule.multiplier(epoch);
            let mut loss_sum = 0.0f64;
            let mut seen = 0usize;
            for (bi, batch_idx) in
                epoch_batches(train_data.len(), config.batch_size, config.seed, global_epoch)
                    .iter()
                    .enumerate()
            {
                let (inputs, labels) = train_data.gather(batch_idx);
                let (inputs, labels) = if augment {
                    augment_batch(
                        &inputs,
                        &labels,
                        config.augment,
                        derive_seed(config.seed, 0xA000 + (global_epoch * 65_536 + bi) as u64),
                    )?
                } else {
                    (inputs, labels)
                };
                let trace = net.forward_full(&inputs)?;
                let signal_pack = match &protos {
                    Some(p) => {
                        let s_input = prototype_batch(p, &labels);
                        let s_trace = net.forward_full(&s_input)?;
                        Some((s_input, s_trace))
                    }
                    None => None,
                };
                let mut locals: Vec<Option<LocalGrad<f32>>> = vec![None; net.module_count()];
                let (loss, local) = local_loss(
                    &losses[stage],
                    &trace,
                    stage,
                    &inputs,
                    signal_pack.as_ref().map(|(s, t)| (s, t)),
                    &labels,
                    train_data.class_count,
                )?;
                locals[stage] = Some(local);
                let grads = net.backward_layerwise(&trace, &locals)?;
                opt.step(net, &grads, lr_mult, config.weight_decay, active.clone())
                    .map_err(|e| {
                        Error::Numeric(format!("stage {stage} epoch {epoch} batch {bi}: {e}"))
                    })?;
                loss_sum += loss * labels.len() as f64;
                seen += labels.len();
            }
            global_epoch += 1;
            report.epochs.push(epoch_metrics(
                net,
                train_data,
                test_data,
                config,
                global_epoch,
                loss_sum / seen.max(1) as f64,
            )?);
            maybe_record(&mut trajectory, net, train_data, config, global_epoch)?;
        }
    }
    Ok(finish_report(report, trajectory))
}
