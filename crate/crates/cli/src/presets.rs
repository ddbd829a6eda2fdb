//! Shipped experiment presets.

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

pub const PRESET_NAMES: [&str; 5] = [
    "paper-mlp-mnist",
    "paper-toy-rings",
    "paper-hsic-reg",
    "paper-ff-mnist",
    "paper-fg-mnist",
];

/// Five-layer 512-wide dense net on digit IDX files, end-to-end baseline.
const MLP_MNIST: &str = r#"
[dataset]
kind = "mnist-idx"
dir = "data/mnist"

[model]
kind = "mlp"
hidden = [512, 512, 512, 512]

[train]
mode = "e2e"
loss = "cross-entropy"
epochs = 100
batch-size = 128
optimizer = "adam"
lr = 1e-3
milestones = [50, 75, 90]
decay = 0.2

[analysis]
record-every = 1

[output]
dir = "runs/paper-mlp-mnist"
"#;

/// Layer-wise linear-head run on the two-ring data; the first layer is a
/// bare 2x2 linear module, matching the rank-collapse construction.
const TOY_RINGS: &str = r#"
[dataset]
kind = "rings"
n-per-class = 500
test-n-per-class = 250
noise-std = 0.1

[model]
kind = "mlp"
hidden = [2, 16]

[train]
mode = "layerwise"
loss = "cross-entropy"
epochs = 60
batch-size = 64
optimizer = "sgd"
lr = 0.1
momentum = 0.9
weight-decay = 0.05
milestones = [10, 30]
decay = 0.1

[analysis]
record-every = 1
eval-subset = 512
eval-batch = 256

[output]
dir = "runs/paper-toy-rings"
"#;

/// The same run with the dependence-augmenting term switched on.
const HSIC_REG: &str = r#"
[dataset]
kind = "rings"
n-per-class = 500
test-n-per-class = 250
noise-std = 0.1

[model]
kind = "mlp"
hidden = [2, 16]

[train]
mode = "layerwise"
loss = "cross-entropy"
epochs = 60
batch-size = 64
optimizer = "sgd"
lr = 0.1
momentum = 0.9
weight-decay = 0.05
hsic-lambda = 0.05
milestones = [10, 30]
decay = 0.1

[analysis]
record-every = 1
eval-subset = 512
eval-batch = 256

[output]
dir = "runs/paper-hsic-reg"
"#;

/// Goodness-based training with one-hot corner labels on digit IDX files.
const FF_MNIST: &str = r#"
[dataset]
kind = "mnist-idx"
dir = "data/mnist"

[model]
kind = "mlp"
hidden = [500, 500]

[train]
mode = "forward-forward"
loss = "ff-goodness"
ff-embed = "one-hot"
ff-mix = "input"
epochs = 30
batch-size = 128
optimizer = "adam"
lr = 1e-3

[analysis]
record-every = 0

[output]
dir = "runs/paper-ff-mnist"
"#;

/// Forward-gradient training of a reduced dense net on digit IDX files.
const FG_MNIST: &str = r#"
[dataset]
kind = "mnist-idx"
dir = "data/mnist"

[model]
kind = "mlp"
hidden = [256]

[train]
mode = "forward-gradient"
loss = "cross-entropy"
epochs = 30
batch-size = 128
optimizer = "adam"
lr = 1e-3

[analysis]
record-every = 0

[output]
dir = "runs/paper-fg-mnist"
"#;

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let text = match name {
        "paper-mlp-mnist" => MLP_MNIST,
        "paper-toy-rings" => TOY_RINGS,
        "paper-hsic-reg" => HSIC_REG,
        "paper-ff-mnist" => FF_MNIST,
        "paper-fg-mnist" => FG_MNIST,
        other => {
            return Err(CliError::Config(format!(
                "unknown preset '{other}'; available: {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    ExperimentConfig::from_toml(text)
}
