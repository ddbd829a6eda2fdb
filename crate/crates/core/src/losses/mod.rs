//! Loss functions for end-to-end and local (per-module) training.
//!
//! Losses accept activations in the network's scalar type but accumulate in
//! f64 internally; gradients are returned in the network's type. Scalar loss
//! values are always f64.

mod classify;
mod goodness;
mod hsic_reg;
mod sim_match;
mod signal_prop;
mod soft_nn;
mod supcon;

pub use classify::{accuracy, cross_entropy};
pub use goodness::ff_goodness_loss;
pub use hsic_reg::{hsic_augmented_local_loss, nhsic_penalty, pooled_matrix};
pub use sim_match::{similarity_matching_loss, SimMatchResult};
pub use signal_prop::{signal_propagation_loss, SpMode};
pub use soft_nn::soft_nearest_neighbor_loss;
pub use supcon::supcon_loss;

use crate::error::{Error, Result};
use crate::hsic::KernelSpec;

/// Loss family selection for a training run.
#[derive(Debug, Clone, PartialEq)]
pub enum LossSpec {
    CrossEntropy,
    /// Supervised contrastive loss at softmax temperature `tau`. When
    /// `normalize` is set, head vectors are L2-normalized inside the loss.
    SupCon { tau: f64, normalize: bool },
    /// Match the cosine-similarity structure of heads to that of one-hot labels.
    SimMatch,
    /// Match row-softmax output similarities to forwarded label-signal
    /// similarities.
    SignalProp(SpMode),
    /// `base - lambda * nhsic(X, Z)` on each module's representation.
    HsicAugmented {
        base: Box<LossSpec>,
        lambda: f64,
        kernel: KernelSpec,
        epsilon: f64,
    },
    /// Forward-forward goodness with threshold `theta`; `None` defaults to
    /// the layer's feature count.
    FfGoodness { theta: Option<f64> },
    /// Soft nearest neighbor loss at `temperature`; analysis-only (returns no
    /// gradient), rejected as a training loss.
    SoftNn { temperature: f64 },
}

impl LossSpec {
    pub fn supcon(tau: f64) -> Self {
        LossSpec::SupCon { tau, normalize: true }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LossSpec::SupCon { tau, .. } if *tau <= 0.0 => Err(Error::Parameter(
                format!("supcon temperature must be positive, got {tau}"),
            )),
            LossSpec::SignalProp(SpMode::Hard { k }) if *k == 0 => {
                Err(Error::Parameter("signal propagation hard k must be >= 1".into()))
            }
            LossSpec::HsicAugmented { base, lambda, epsilon, .. } => {
                if *lambda < 0.0 {
                    return Err(Error::Parameter(format!(
                        "regularization strength must be nonnegative, got {lambda}"
                    )));
                }
                if *epsilon <= 0.0 {
                    return Err(Error::Parameter(format!(
                        "epsilon must be positive, got {epsilon}"
                    )));
                }
                base.validate()
            }
            LossSpec::SoftNn { temperature } if *temperature <= 0.0 => Err(Error::Parameter(
                format!("soft-nn temperature must be positive, got {temperature}"),
            )),
            _ => Ok(()),
        }
    }

    /// Required auxiliary-head output width, when the family constrains it.
    pub fn required_head_dim(&self, class_count: usize) -> Option<usize> {
        match self {
            LossSpec::CrossEntropy => Some(class_count),
            LossSpec::SimMatch | LossSpec::SupCon { .. } => None,
            LossSpec::SignalProp(_) | LossSpec::FfGoodness { .. } | LossSpec::SoftNn { .. } => None,
            LossSpec::HsicAugmented { base, .. } => base.required_head_dim(class_count),
        }
    }
}

/// Numerically stable log-sum-exp over a slice.
pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Stable `ln(1 + exp(x))`.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
