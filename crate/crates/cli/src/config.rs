//! Experiment configuration: a strict TOML tree.
//!
//! Unknown keys are rejected outright; silently ignored typos produce
//! unreproducible experiments. Every default is materialized on load so the
//! emitted config echo is fully resolved.

use serde::{Deserialize, Serialize};

use infoplane_core::data::{AugmentConfig, PrototypeSource};
use infoplane_core::hsic::KernelSpec;
use infoplane_core::losses::{LossSpec, SpMode};
use infoplane_core::nn::{derive_seed, AuxHeadSpec, LayerKind, LayerSpec, ModuleSpec};
use infoplane_core::train::{
    FfLabelEmbed, FfMixLocation, OptimizerSpec, Schedule, TrainConfig, TrainMode,
};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainBlock,
    #[serde(default)]
    pub analysis: AnalysisBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", rename_all_fields = "kebab-case", tag = "kind")]
pub enum DatasetConfig {
    /// Two-ring synthetic data.
    Rings {
        #[serde(default = "default_rings_n")]
        n_per_class: usize,
        #[serde(default = "default_rings_test_n")]
        test_n_per_class: usize,
        #[serde(default = "default_noise")]
        noise_std: f64,
    },
    /// IDX image/label pairs laid out like the published digit files.
    MnistIdx {
        dir: String,
        #[serde(default)]
        limit_train: Option<usize>,
        #[serde(default)]
        limit_test: Option<usize>,
    },
    /// CIFAR-10 binary batches.
    Cifar10 {
        train_files: Vec<String>,
        test_files: Vec<String>,
        #[serde(default)]
        standardize: bool,
    },
    /// Procedural digit glyphs (deterministic, offline).
    Glyphs {
        #[serde(default = "default_glyphs_train")]
        n_train: usize,
        #[serde(default = "default_glyphs_test")]
        n_test: usize,
    },
}

fn default_rings_n() -> usize {
    500
}
fn default_rings_test_n() -> usize {
    250
}
fn default_noise() -> f64 {
    0.1
}
fn default_glyphs_train() -> usize {
    8000
}
fn default_glyphs_test() -> usize {
    2000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", rename_all_fields = "kebab-case", tag = "kind")]
pub enum ModelConfig {
    /// Dense stack: one module per hidden layer plus a class-wide output
    /// module.
    Mlp {
        hidden: Vec<usize>,
        #[serde(default = "default_head")]
        heads: HeadKind,
        #[serde(default)]
        head_dim: Option<usize>,
        #[serde(default = "default_mlp2_hidden")]
        head_hidden: usize,
    },
    /// Five-module convolutional net in the classic small-image shape.
    Lenet {
        #[serde(default = "default_head")]
        heads: HeadKind,
        #[serde(default)]
        head_dim: Option<usize>,
        #[serde(default = "default_mlp2_hidden")]
        head_hidden: usize,
    },
}

fn default_head() -> HeadKind {
    HeadKind::Linear
}
fn default_mlp2_hidden() -> usize {
    256
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    Identity,
    Linear,
    Mlp2,
    Conv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainBlock {
    pub mode: ModeKind,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub epochs_per_layer: Option<usize>,
    #[serde(default)]
    pub retrain_boundary: Option<usize>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub milestones: Vec<usize>,
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tau")]
    pub supcon_tau: f64,
    #[serde(default = "default_true")]
    pub supcon_normalize: bool,
    #[serde(default = "default_sp_k")]
    pub sp_k: usize,
    #[serde(default)]
    pub hsic_lambda: f64,
    #[serde(default = "default_epsilon")]
    pub hsic_epsilon: f64,
    #[serde(default)]
    pub ff_embed: FfEmbedKind,
    #[serde(default)]
    pub ff_mix: FfMixKind,
    #[serde(default)]
    pub ff_theta: Option<f64>,
    #[serde(default)]
    pub prototypes: PrototypeKind,
    #[serde(default)]
    pub augment: AugmentKind,
    #[serde(default = "default_pad")]
    pub augment_pad: usize,
    #[serde(default = "default_jitter")]
    pub jitter_std: f64,
}

fn default_loss() -> LossKind {
    LossKind::CrossEntropy
}
fn default_epochs() -> usize {
    100
}
fn default_batch() -> usize {
    64
}
fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Adam
}
fn default_lr() -> f64 {
    1e-3
}
fn default_momentum() -> f64 {
    0.9
}
fn default_decay() -> f64 {
    0.2
}
fn default_tau() -> f64 {
    0.1
}
fn default_true() -> bool {
    true
}
fn default_sp_k() -> usize {
    6
}
fn default_epsilon() -> f64 {
    1e-5
}
fn default_pad() -> usize {
    4
}
fn default_jitter() -> f64 {
    0.05
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeKind {
    E2e,
    Layerwise,
    LayerwiseSequential,
    Retrain,
    ForwardForward,
    ForwardGradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    CrossEntropy,
    Supcon,
    SimMatch,
    SpHard,
    SpSoft,
    FfGoodness,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FfEmbedKind {
    #[default]
    OneHot,
    Prototype,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FfMixKind {
    #[default]
    Input,
    PerLayer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PrototypeKind {
    FixedImage,
    RandomPerClass,
    ClassMean,
    #[default]
    OneHotCorner,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AugmentKind {
    #[default]
    None,
    Image,
    Jitter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct AnalysisBlock {
    /// Epochs between information-plane snapshots; 0 disables recording.
    #[serde(default = "default_record")]
    pub record_every: usize,
    #[serde(default = "default_eval_subset")]
    pub eval_subset: usize,
    #[serde(default = "default_eval_batch")]
    pub eval_batch: usize,
    #[serde(default)]
    pub probe: bool,
    #[serde(default)]
    pub bound_check: bool,
    #[serde(default = "default_bound_sigma")]
    pub bound_sigma: f64,
    #[serde(default = "default_bound_mc")]
    pub bound_mc: usize,
}

fn default_record() -> usize {
    1
}
fn default_eval_subset() -> usize {
    1024
}
fn default_eval_batch() -> usize {
    256
}
fn default_bound_sigma() -> f64 {
    1.0
}
fn default_bound_mc() -> usize {
    500
}

impl Default for AnalysisBlock {
    fn default() -> Self {
        Self {
            record_every: default_record(),
            eval_subset: default_eval_subset(),
            eval_batch: default_eval_batch(),
            probe: false,
            bound_check: false,
            bound_sigma: default_bound_sigma(),
            bound_mc: default_bound_mc(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct OutputBlock {
    #[serde(default = "default_out_dir")]
    pub dir: String,
    #[serde(default = "default_true")]
    pub plots: bool,
    #[serde(default = "default_true")]
    pub checkpoint: bool,
}

fn default_out_dir() -> String {
    "runs/experiment".into()
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { dir: default_out_dir(), plots: true, checkpoint: true }
    }
}

impl ExperimentConfig {
    /// Parses a strict TOML tree; unknown keys produce an error naming the
    /// key and location.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Fully resolved view, defaults included.
    pub fn resolved_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// The loss specification the train block describes.
    pub fn loss_spec(&self) -> LossSpec {
        let base = match self.train.loss {
            LossKind::CrossEntropy => LossSpec::CrossEntropy,
            LossKind::Supcon => LossSpec::SupCon {
                tau: self.train.supcon_tau,
                normalize: self.train.supcon_normalize,
            },
            LossKind::SimMatch => LossSpec::SimMatch,
            LossKind::SpHard => LossSpec::SignalProp(SpMode::Hard { k: self.train.sp_k }),
            LossKind::SpSoft => LossSpec::SignalProp(SpMode::Soft),
            LossKind::FfGoodness => LossSpec::FfGoodness { theta: self.train.ff_theta },
        };
        if self.train.hsic_lambda > 0.0 && !matches!(base, LossSpec::FfGoodness { .. }) {
            LossSpec::HsicAugmented {
                base: Box::new(base),
                lambda: self.train.hsic_lambda,
                kernel: KernelSpec::rbf_five_sqrt_d(),
                epsilon: self.train.hsic_epsilon,
            }
        } else {
            base
        }
    }

    pub fn prototype_source(&self) -> PrototypeSource {
        match self.train.prototypes {
            PrototypeKind::FixedImage => PrototypeSource::FixedImage,
            PrototypeKind::RandomPerClass => PrototypeSource::RandomPerClass,
            PrototypeKind::ClassMean => PrototypeSource::ClassMean,
            PrototypeKind::OneHotCorner => PrototypeSource::OneHotCorner,
            PrototypeKind::Gaussian => PrototypeSource::GaussianProjection,
        }
    }

    /// Builds the core train configuration.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let mode = match self.train.mode {
            ModeKind::E2e => TrainMode::E2E,
            ModeKind::Layerwise => TrainMode::LayerwiseSimultaneous,
            ModeKind::LayerwiseSequential => TrainMode::LayerwiseSequential {
                epochs_per_layer: self.train.epochs_per_layer.ok_or_else(|| {
                    CliError::Config("layerwise-sequential needs epochs-per-layer".into())
                })?,
            },
            ModeKind::Retrain => TrainMode::RetrainFromLayer {
                boundary: self.train.retrain_boundary.ok_or_else(|| {
                    CliError::Config("retrain needs retrain-boundary".into())
                })?,
            },
            ModeKind::ForwardForward => TrainMode::ForwardForward {
                label_embed: match self.train.ff_embed {
                    FfEmbedKind::OneHot => FfLabelEmbed::OneHot,
                    FfEmbedKind::Prototype => {
                        FfLabelEmbed::Prototype(self.prototype_source())
                    }
                },
                mix_location: match self.train.ff_mix {
                    FfMixKind::Input => FfMixLocation::InputOnly,
                    FfMixKind::PerLayer => FfMixLocation::PerLayer,
                },
            },
            ModeKind::ForwardGradient => TrainMode::ForwardGradient,
        };
        let optimizer = match self.train.optimizer {
            OptimizerKind::Adam => OptimizerSpec::adam(self.train.lr),
            OptimizerKind::Sgd => OptimizerSpec::Sgd {
                lr: self.train.lr,
                momentum: self.train.momentum,
            },
        };
        let mut config = TrainConfig::new(
            mode,
            self.loss_spec(),
            optimizer,
            self.train.epochs,
            self.train.batch_size,
            self.train.seed,
        );
        config.schedule = Schedule {
            milestones: self.train.milestones.clone(),
            factor: self.train.decay,
        };
        config.weight_decay = self.train.weight_decay;
        config.record_every = if self.analysis.record_every == 0 {
            None
        } else {
            Some(self.analysis.record_every)
        };
        config.eval_subset = self.analysis.eval_subset;
        config.eval_batch = self.analysis.eval_batch;
        config.augment = match self.train.augment {
            AugmentKind::None => AugmentConfig::None,
            AugmentKind::Image => AugmentConfig::Image { pad: self.train.augment_pad },
            AugmentKind::Jitter => AugmentConfig::Jitter { std: self.train.jitter_std },
        };
        config.prototypes = self.prototype_source();
        Ok(config)
    }

    /// Module specs for the configured model over a concrete input shape.
    pub fn module_specs(&self, input_shape: &[usize], class_count: usize) -> Result<Vec<ModuleSpec>> {
        let seed = self.train.seed;
        let flat: usize = input_shape.iter().product();
        let head_for = |dim_in_spatial: bool, idx: usize, out_dim: usize, kind: HeadKind, hidden: usize| {
            let spec = match kind {
                HeadKind::Identity => AuxHeadSpec::Identity,
                HeadKind::Linear => AuxHeadSpec::Linear { out: out_dim },
                HeadKind::Mlp2 => AuxHeadSpec::Mlp2 { hidden, out: out_dim },
                HeadKind::Conv => {
                    if dim_in_spatial {
                        AuxHeadSpec::ConvHead { channels: out_dim.max(1) }
                    } else {
                        AuxHeadSpec::Linear { out: out_dim }
                    }
                }
            };
            (spec, derive_seed(seed, 0xEAD0 + idx as u64))
        };

        // Goodness-based training scores layers by activation norm; the
        // modules are the hidden layers themselves, with no classifier
        // module and no auxiliary heads.
        let for_goodness = self.train.mode == ModeKind::ForwardForward;

        match &self.model {
            ModelConfig::Mlp { hidden, heads, head_dim, head_hidden } => {
                if for_goodness {
                    let mut specs = Vec::new();
                    let mut prev = flat;
                    for (i, &h) in hidden.iter().enumerate() {
                        specs.push(ModuleSpec {
                            layers: vec![
                                LayerSpec::new(
                                    LayerKind::Dense { input: prev, output: h },
                                    derive_seed(seed, 0x1a0 + i as u64),
                                ),
                                LayerSpec::new(LayerKind::ReLU, 0),
                            ],
                            head: AuxHeadSpec::Identity,
                            head_seed: 0,
                            detach_input: false,
                        });
                        prev = h;
                    }
                    if specs.is_empty() {
                        return Err(CliError::Config(
                            "forward-forward needs at least one hidden layer".into(),
                        ));
                    }
                    return Ok(specs);
                }
                let out_dim = head_dim.unwrap_or(class_count);
                let mut specs = Vec::new();
                let mut prev = flat;
                for (i, &h) in hidden.iter().enumerate() {
                    let (head, head_seed) = head_for(false, i, out_dim, *heads, *head_hidden);
                    specs.push(ModuleSpec {
                        layers: vec![
                            LayerSpec::new(
                                LayerKind::Dense { input: prev, output: h },
                                derive_seed(seed, 0x1a0 + i as u64),
                            ),
                            LayerSpec::new(LayerKind::ReLU, 0),
                        ],
                        head,
                        head_seed,
                        detach_input: false,
                    });
                    prev = h;
                }
                specs.push(ModuleSpec {
                    layers: vec![LayerSpec::new(
                        LayerKind::Dense { input: prev, output: class_count },
                        derive_seed(seed, 0x1a0 + hidden.len() as u64),
                    )],
                    head: AuxHeadSpec::Identity,
                    head_seed: 0,
                    detach_input: false,
                });
                Ok(specs)
            }
            ModelConfig::Lenet { heads, head_dim, head_hidden } => {
                if input_shape.len() != 3 {
                    return Err(CliError::Config(format!(
                        "the convolutional model needs (c, h, w) inputs, got {input_shape:?}"
                    )));
                }
                let out_dim = head_dim.unwrap_or(class_count);
                let in_ch = input_shape[0];
                let side = input_shape[1];
                // Classic shape: 5x5 convs with pool-by-2 between them.
                let s1 = side; // conv pad 2 keeps size
                let p1 = s1 / 2;
                let s2 = p1 - 4; // 5x5 valid conv
                let p2 = s2 / 2;
                let flat_conv = 16 * p2 * p2;
                let mk_head = |i: usize, spatial: bool| head_for(spatial, i, out_dim, *heads, *head_hidden);
                let (h0, hs0) = mk_head(0, true);
                let (h1, hs1) = mk_head(1, true);
                let (h2, hs2) = mk_head(2, false);
                let (h3, hs3) = mk_head(3, false);
                Ok(vec![
                    ModuleSpec {
                        layers: vec![
                            LayerSpec::new(
                                LayerKind::Conv2D { in_ch, out_ch: 6, kernel: 5, stride: 1, pad: 2 },
                                derive_seed(seed, 0x2a0),
                            ),
                            LayerSpec::new(LayerKind::ReLU, 0),
                            LayerSpec::new(LayerKind::AvgPool2D { window: 2 }, 0),
                        ],
                        head: h0,
                        head_seed: hs0,
                        detach_input: false,
                    },
                    ModuleSpec {
                        layers: vec![
                            LayerSpec::new(
                                LayerKind::Conv2D { in_ch: 6, out_ch: 16, kernel: 5, stride: 1, pad: 0 },
                                derive_seed(seed, 0x2a1),
                            ),
                            LayerSpec::new(LayerKind::ReLU, 0),
                            LayerSpec::new(LayerKind::AvgPool2D { window: 2 }, 0),
                        ],
                        head: h1,
                        head_seed: hs1,
                        detach_input: false,
                    },
                    ModuleSpec {
                        layers: vec![
                            LayerSpec::new(LayerKind::Flatten, 0),
                            LayerSpec::new(
                                LayerKind::Dense { input: flat_conv, output: 120 },
                                derive_seed(seed, 0x2a2),
                            ),
                            LayerSpec::new(LayerKind::ReLU, 0),
                        ],
                        head: h2,
                        head_seed: hs2,
                        detach_input: false,
                    },
                    ModuleSpec {
                        layers: vec![
                            LayerSpec::new(
                                LayerKind::Dense { input: 120, output: 84 },
                                derive_seed(seed, 0x2a3),
                            ),
                            LayerSpec::new(LayerKind::ReLU, 0),
                        ],
                        head: h3,
                        head_seed: hs3,
                        detach_input: false,
                    },
                    ModuleSpec {
                        layers: vec![LayerSpec::new(
                            LayerKind::Dense { input: 84, output: class_count },
                            derive_seed(seed, 0x2a4),
                        )],
                        head: AuxHeadSpec::Identity,
                        head_seed: 0,
                        detach_input: false,
                    },
                ])
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [dataset]
        kind = "rings"

        [model]
        kind = "mlp"
        hidden = [16]

        [train]
        mode = "e2e"
    "#;

    #[test]
    fn minimal_config_resolves_defaults() {
        let config = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(config.train.epochs, 100);
        assert_eq!(config.train.batch_size, 64);
        assert_eq!(config.analysis.record_every, 1);
        assert!(config.output.plots);
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let bad = MINIMAL.replace("[train]", "[trian]");
        let err = ExperimentConfig::from_toml(&bad).unwrap_err();
        assert!(err.to_string().contains("trian"), "{err}");

        let bad2 = format!("{MINIMAL}\nbogus_key = 3\n");
        let err2 = ExperimentConfig::from_toml(&bad2).unwrap_err();
        assert!(err2.to_string().contains("bogus_key"), "{err2}");
    }

    #[test]
    fn resolved_round_trip_is_identical() {
        let config = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let emitted = config.resolved_toml().unwrap();
        let reloaded = ExperimentConfig::from_toml(&emitted).unwrap();
        assert_eq!(config, reloaded);
        assert_eq!(emitted, reloaded.resolved_toml().unwrap());
    }

    #[test]
    fn type_mismatch_is_a_config_error() {
        let bad = MINIMAL.replace("hidden = [16]", "hidden = \"wat\"");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn hsic_lambda_wraps_the_loss() {
        let mut config = ExperimentConfig::from_toml(MINIMAL).unwrap();
        config.train.hsic_lambda = 0.05;
        match config.loss_spec() {
            LossSpec::HsicAugmented { lambda, .. } => assert_eq!(lambda, 0.05),
            other => panic!("expected augmented loss, got {other:?}"),
        }
    }
}
