//! Forward-forward training: each layer learns to give correctly-labeled
//! inputs a large activation norm and incorrectly-labeled ones a small norm,
//! with per-sample L2 normalization between layers.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, PrototypeSet, PrototypeSource};
use crate::error::{Error, Result};
use crate::label::ClassLabel;
use crate::losses::{ff_goodness_loss, LossSpec};
use crate::nn::{derive_seed, Network};
use crate::tensor::Tensor32;
use crate::train::optim::OptimizerState;
use crate::train::{epoch_batches, EpochMetrics, TrainConfig, TrainMode, TrainReport};

/// How label information is written into the input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FfLabelEmbed {
    /// Overwrite the first `c` flattened pixels with a one-hot.
    OneHot,
    /// Average the input with a class prototype image.
    Prototype(PrototypeSource),
}

/// Where label information is mixed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FfMixLocation {
    /// Mix once before the whole network (the original construction).
    InputOnly,
    /// Forward input and label signal separately and mix just before each
    /// trained layer.
    PerLayer,
}

fn embed_one_hot(inputs: &Tensor32, labels: &[ClassLabel], class_count: usize) -> Tensor32 {
    let mut out = inputs.flattened_2d();
    for (i, l) in labels.iter().enumerate() {
        let row = out.sample_mut(i);
        for k in 0..class_count {
            row[k] = 0.0;
        }
        row[l.index()] = 1.0;
    }
    out
}

fn embed_prototype(inputs: &Tensor32, labels: &[ClassLabel], protos: &PrototypeSet) -> Tensor32 {
    let mut out = inputs.flattened_2d();
    for (i, l) in labels.iter().enumerate() {
        let p = protos.for_label(*l);
        for (v, pv) in out.sample_mut(i).iter_mut().zip(p) {
            *v = 0.5 * (*v + *pv);
        }
    }
    out
}

/// The label signal alone, in input space.
fn label_signal(
    labels: &[ClassLabel],
    class_count: usize,
    sample_shape: &[usize],
    embed: FfLabelEmbed,
    protos: Option<&PrototypeSet>,
) -> Result<Tensor32> {
    let mut shape = vec![labels.len()];
    shape.extend_from_slice(sample_shape);
    let zeros = Tensor32::zeros(&shape);
    Ok(match embed {
        FfLabelEmbed::OneHot => embed_one_hot(&zeros, labels, class_count),
        FfLabelEmbed::Prototype(_) => {
            let p = protos
                .ok_or_else(|| Error::State("prototype embedding needs a prototype set".into()))?;
            let d: usize = p.sample_shape.iter().product();
            let mut data = Vec::with_capacity(labels.len() * d);
            for l in labels {
                data.extend_from_slice(p.for_label(*l));
            }
            Tensor32::new(vec![labels.len(), d], data)?
        }
    })
}

/// Draws a uniformly wrong label for every sample.
fn wrong_labels(
    labels: &[ClassLabel],
    class_count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<ClassLabel> {
    labels
        .iter()
        .map(|l| {
            let shift = rng.random_range(1..class_count);
            let idx = (l.index() + shift) % class_count;
            ClassLabel::from_index(idx, class_count).expect("index in range")
        })
        .collect()
}

/// Per-sample L2 normalization; zero rows stay zero.
fn normalize_rows(t: &Tensor32) -> Tensor32 {
    let mut out = t.flattened_2d();
    for i in 0..out.batch() {
        let row = out.sample_mut(i);
        let norm: f32 = row.iter().map(|v| v * v).sum::<f32>().sqrt();
        if norm > 1e-12 {
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
    }
    out
}

fn forward_module(net: &Network<f32>, mi: usize, input: &Tensor32) -> Result<Tensor32> {
    let mut cur = input.clone();
    for layer in &net.modules[mi].layers {
        cur = layer.forward(&cur)?;
    }
    Ok(cur.flattened_2d())
}

fn squared_norms(t: &Tensor32) -> Vec<f64> {
    (0..t.batch())
        .map(|i| {
            t.sample(i)
                .iter()
                .map(|v| (*v as f64) * (*v as f64))
                .sum::<f64>()
        })
        .collect()
}

fn mix(a: &Tensor32, b: &Tensor32) -> Tensor32 {
    let mut out = a.clone();
    for (x, y) in out.data_mut().iter_mut().zip(b.data()) {
        *x = 0.5 * (*x + *y);
    }
    out
}

fn stack_rows(a: &Tensor32, b: &Tensor32) -> Tensor32 {
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor32::new(vec![a.batch() + b.batch(), a.sample_len()], data)
        .expect("stacked shapes consistent")
}

fn split_rows(t: &Tensor32, first: usize) -> (Tensor32, Tensor32) {
    let sample = t.sample_len();
    (
        Tensor32::new(vec![first, sample], t.data()[..first * sample].to_vec())
            .expect("split consistent"),
        Tensor32::new(
            vec![t.batch() - first, sample],
            t.data()[first * sample..].to_vec(),
        )
        .expect("split consistent"),
    )
}

/// Summed goodness over modules for one candidate labeling.
fn goodness_for_candidate(
    net: &Network<f32>,
    inputs: &Tensor32,
    candidate: &[ClassLabel],
    class_count: usize,
    embed: FfLabelEmbed,
    mix_location: FfMixLocation,
    protos: Option<&PrototypeSet>,
) -> Result<Vec<f64>> {
    let mut scores = vec![0.0f64; inputs.batch()];
    match mix_location {
        FfMixLocation::InputOnly => {
            let mut cur = match embed {
                FfLabelEmbed::OneHot => embed_one_hot(inputs, candidate, class_count),
                FfLabelEmbed::Prototype(_) => embed_prototype(
                    inputs,
                    candidate,
                    protos.ok_or_else(|| {
                        Error::State("prototype embedding needs a prototype set".into())
                    })?,
                ),
            };
            for mi in 0..net.module_count() {
                let z = forward_module(net, mi, &cur)?;
                for (s, g) in scores.iter_mut().zip(squared_norms(&z)) {
                    *s += g;
                }
                cur = normalize_rows(&z);
            }
        }
        FfMixLocation::PerLayer => {
            let mut zx = inputs.flattened_2d();
            let mut zs = label_signal(
                candidate,
                class_count,
                &inputs.shape()[1..],
                embed,
                protos,
            )?;
            for mi in 0..net.module_count() {
                let mixed = mix(&zx, &zs);
                let z = forward_module(net, mi, &mixed)?;
                for (s, g) in scores.iter_mut().zip(squared_norms(&z)) {
                    *s += g;
                }
                zx = normalize_rows(&forward_module(net, mi, &zx)?);
                zs = normalize_rows(&forward_module(net, mi, &zs)?);
            }
        }
    }
    Ok(scores)
}

/// Embedded forward pass returning each module's L2-normalized output
/// stream: exactly the tensors the next layer consumes during training and
/// scoring.
pub fn ff_normalized_streams(
    net: &Network<f32>,
    inputs: &Tensor32,
    labels: &[ClassLabel],
    class_count: usize,
    embed: FfLabelEmbed,
    protos: Option<&PrototypeSet>,
) -> Result<Vec<Tensor32>> {
    let mut cur = match embed {
        FfLabelEmbed::OneHot => embed_one_hot(inputs, labels, class_count),
        FfLabelEmbed::Prototype(_) => embed_prototype(
            inputs,
            labels,
            protos.ok_or_else(|| Error::State("prototype embedding needs a prototype set".into()))?,
        ),
    };
    let mut streams = Vec::with_capacity(net.module_count());
    for mi in 0..net.module_count() {
        let z = forward_module(net, mi, &cur)?;
        cur = normalize_rows(&z);
        streams.push(cur.clone());
    }
    Ok(streams)
}

/// Scores every candidate label per sample by summed goodness across layers
/// and takes the argmax.
pub fn ff_predict(
    net: &Network<f32>,
    inputs: &Tensor32,
    class_count: usize,
    embed: FfLabelEmbed,
    mix_location: FfMixLocation,
    protos: Option<&PrototypeSet>,
) -> Result<Vec<ClassLabel>> {
    let n = inputs.batch();
    let mut best = vec![(f64::NEG_INFINITY, 0usize); n];
    for k in 0..class_count {
        let candidate = vec![ClassLabel::from_index(k, class_count)?; n];
        let scores = goodness_for_candidate(
            net,
            inputs,
            &candidate,
            class_count,
            embed,
            mix_location,
            protos,
        )?;
        for (slot, score) in best.iter_mut().zip(scores) {
            if score > slot.0 {
                *slot = (score, k);
            }
        }
    }
    best.iter()
        .map(|(_, k)| ClassLabel::from_index(*k, class_count))
        .collect()
}

fn ff_accuracy(
    net: &Network<f32>,
    inputs: &Tensor32,
    labels: &[ClassLabel],
    class_count: usize,
    embed: FfLabelEmbed,
    mix_location: FfMixLocation,
    protos: Option<&PrototypeSet>,
) -> Result<f64> {
    let predicted = ff_predict(net, inputs, class_count, embed, mix_location, protos)?;
    let correct = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / labels.len().max(1) as f64)
}

/// Per batch: construct positive pairs (true label embedded) and negative
/// pairs (uniformly wrong label); each layer optimizes the goodness loss on
/// its own output; outputs are L2-normalized per sample before the next
/// layer.
pub(crate) fn train_forward_forward(
    net: &mut Network<f32>,
    train_data: &Dataset,
    test_data: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<TrainReport> {
    let TrainMode::ForwardForward { label_embed, mix_location } = config.mode.clone() else {
        return Err(Error::State("forward-forward trainer called in another mode".into()));
    };
    let theta_override = match &config.loss {
        LossSpec::FfGoodness { theta } => *theta,
        other => {
            return Err(Error::Config(format!(
                "forward-forward training uses the goodness loss, got {other:?}"
            )))
        }
    };
    let protos = match label_embed {
        FfLabelEmbed::Prototype(source) => Some(PrototypeSet::build(
            train_data,
            source,
            derive_seed(config.seed, 0x7777),
        )?),
        FfLabelEmbed::OneHot => {
            if train_data.inputs.sample_len() < train_data.class_count {
                return Err(Error::Config(
                    "inputs too narrow to embed a one-hot label".into(),
                ));
            }
            None
        }
    };
    let class_count = train_data.class_count;
    let mut opt = OptimizerState::new(config.optimizer);
    let active = 0..net.module_count();
    let mut report = TrainReport::empty();
    let mut neg_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0x4e67));

    for epoch in 0..config.epochs {
        let lr_mult = config.schedule.multiplier(epoch);
        let mut loss_sum = 0.0f64;
        let mut seen = 0usize;
        for (bi, batch_idx) in epoch_batches(train_data.len(), config.batch_size, config.seed, epoch)
            .iter()
            .enumerate()
        {
            let (inputs, labels) = train_data.gather(batch_idx);
            let negatives = wrong_labels(&labels, class_count, &mut neg_rng);
            let m = labels.len();
            let signs: Vec<bool> = (0..2 * m).map(|i| i < m).collect();

            let (mut cur_pos, mut cur_neg, mut sig_pos, mut sig_neg) = match mix_location {
                FfMixLocation::InputOnly => {
                    let pos = match label_embed {
                        FfLabelEmbed::OneHot => embed_one_hot(&inputs, &labels, class_count),
                        FfLabelEmbed::Prototype(_) => {
                            embed_prototype(&inputs, &labels, protos.as_ref().expect("built above"))
                        }
                    };
                    let neg = match label_embed {
                        FfLabelEmbed::OneHot => embed_one_hot(&inputs, &negatives, class_count),
                        FfLabelEmbed::Prototype(_) => embed_prototype(
                            &inputs,
                            &negatives,
                            protos.as_ref().expect("built above"),
                        ),
                    };
                    (pos, neg, None, None)
                }
                FfMixLocation::PerLayer => {
                    let shape = &inputs.shape()[1..];
                    let sp = label_signal(&labels, class_count, shape, label_embed, protos.as_ref())?;
                    let sn =
                        label_signal(&negatives, class_count, shape, label_embed, protos.as_ref())?;
                    let pure = inputs.flattened_2d();
                    (pure.clone(), pure, Some(sp), Some(sn))
                }
            };

            let mut batch_loss = 0.0f64;
            let mut grads = net.zero_grads();
            for mi in 0..net.module_count() {
                let (pos_in, neg_in) = match mix_location {
                    FfMixLocation::InputOnly => (cur_pos.clone(), cur_neg.clone()),
                    FfMixLocation::PerLayer => (
                        mix(&cur_pos, sig_pos.as_ref().expect("per-layer signal")),
                        mix(&cur_neg, sig_neg.as_ref().expect("per-layer signal")),
                    ),
                };
                let stacked = stack_rows(&pos_in, &neg_in);
                let mut acts = vec![stacked];
                for layer in &net.modules[mi].layers {
                    let next = layer.forward(acts.last().expect("nonempty"))?;
                    acts.push(next);
                }
                let z = acts.last().expect("nonempty").flattened_2d();
                let theta = theta_override.unwrap_or(z.sample_len() as f64);
                let (loss, grad) = ff_goodness_loss(&z, &signs, theta)?;
                batch_loss += loss;
                let mut g = grad.reshaped(acts.last().expect("nonempty").shape())?;
                for (li, layer) in net.modules[mi].layers.iter().enumerate().rev() {
                    g = layer.backward(&acts[li], &g, &mut grads.modules[mi].layers[li])?;
                }
                match mix_location {
                    FfMixLocation::InputOnly => {
                        let z_norm = normalize_rows(&z);
                        let (zp, zn) = split_rows(&z_norm, m);
                        cur_pos = zp;
                        cur_neg = zn;
                    }
                    FfMixLocation::PerLayer => {
                        let next_pure =
                            normalize_rows(&forward_module(net, mi, &cur_pos)?);
                        cur_pos = next_pure.clone();
                        cur_neg = next_pure;
                        sig_pos = Some(normalize_rows(&forward_module(
                            net,
                            mi,
                            sig_pos.as_ref().expect("per-layer signal"),
                        )?));
                        sig_neg = Some(normalize_rows(&forward_module(
                            net,
                            mi,
                            sig_neg.as_ref().expect("per-layer signal"),
                        )?));
                    }
                }
            }
            opt.step(net, &grads, lr_mult, config.weight_decay, active.clone())
                .map_err(|e| Error::Numeric(format!("epoch {epoch} batch {bi}: {e}")))?;
            loss_sum += batch_loss * m as f64;
            seen += m;
        }

        let (tr_in, tr_labels) = train_data.head(config.metrics_subset);
        let train_accuracy = Some(ff_accuracy(
            net,
            &tr_in,
            &tr_labels,
            class_count,
            label_embed,
            mix_location,
            protos.as_ref(),
        )?);
        // Scoring runs one forward pass per candidate class, so per-epoch
        // test metrics are capped at the metrics subset; callers wanting the
        // full test accuracy evaluate once after training via `ff_predict`.
        let test_accuracy = match test_data {
            Some(t) => {
                let (te_in, te_labels) = t.head(config.metrics_subset);
                Some(ff_accuracy(
                    net,
                    &te_in,
                    &te_labels,
                    class_count,
                    label_embed,
                    mix_location,
                    protos.as_ref(),
                )?)
            }
            None => None,
        };
        report.epochs.push(EpochMetrics {
            epoch: epoch + 1,
            train_loss: loss_sum / seen.max(1) as f64,
            train_accuracy,
            test_loss: None,
            test_accuracy,
        });
    }
    report.final_train_accuracy = report.epochs.last().and_then(|e| e.train_accuracy);
    report.final_test_accuracy = report.epochs.last().and_then(|e| e.test_accuracy);
    Ok(report)
}
