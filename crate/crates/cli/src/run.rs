//! Experiment orchestration: dataset construction, training, analyses, and
//! atomic artifact emission.

use std::path::{Path, PathBuf};

use serde::Serialize;

use infoplane_core::analysis::{probe_network, snn_hsic_bound_check, ProbeConfig, ProbeResult};
use infoplane_core::data::{
    load_cifar10_binary, load_idx_dataset, make_glyph_digits, make_rings_dataset, Dataset, Split,
};
use infoplane_core::label::ClassLabel;
use infoplane_core::losses::pooled_matrix;
use infoplane_core::nn::{derive_seed, Network};
use infoplane_core::tensor::Tensor32;
use infoplane_core::train::{train, TrainReport};

use crate::config::{DatasetConfig, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::plot;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Paths of everything a run produced.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub report: PathBuf,
    pub trajectory: Option<PathBuf>,
    pub probe: Option<PathBuf>,
    pub plots: Vec<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Serialize)]
struct Report<'a> {
    schema_version: u32,
    library_version: &'static str,
    config: &'a ExperimentConfig,
    metrics: MetricsSection<'a>,
    probe: Option<&'a ProbeResult>,
    bound_check: Option<BoundSection>,
    trajectory: Option<TrajectorySection>,
    /// Wall-clock timing; explicitly non-deterministic.
    timing: TimingSection,
}

#[derive(Serialize)]
struct MetricsSection<'a> {
    epochs: &'a [infoplane_core::train::EpochMetrics],
    final_train_accuracy: Option<f64>,
    final_test_accuracy: Option<f64>,
}

#[derive(Serialize)]
struct BoundSection {
    lhs: f64,
    rhs: f64,
    holds: bool,
    mc_stderr: f64,
    hsic_yz: f64,
    sigma: f64,
    n_mc: usize,
}

#[derive(Serialize)]
struct TrajectorySection {
    epsilon: f64,
    eval_subset: usize,
    eval_set: &'static str,
    points: usize,
    seed: u64,
    kernel_x: String,
    kernel_z: String,
    kernel_y: String,
}

#[derive(Serialize)]
struct TimingSection {
    wall_clock_secs: f64,
    note: &'static str,
}

/// Builds the train/test datasets the config describes.
pub fn build_datasets(config: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let seed = config.train.seed;
    match &config.dataset {
        DatasetConfig::Rings { n_per_class, test_n_per_class, noise_std } => {
            let train = make_rings_dataset(*n_per_class, *noise_std, derive_seed(seed, 0xDA7A))?;
            let mut test =
                make_rings_dataset(*test_n_per_class, *noise_std, derive_seed(seed, 0xDA7B))?;
            test.split = Split::Test;
            Ok((train, test))
        }
        DatasetConfig::MnistIdx { dir, limit_train, limit_test } => {
            let dir = Path::new(dir);
            let train = load_idx_dataset(
                &dir.join("train-images-idx3-ubyte"),
                &dir.join("train-labels-idx1-ubyte"),
                Split::Train,
            )?;
            let test = load_idx_dataset(
                &dir.join("t10k-images-idx3-ubyte"),
                &dir.join("t10k-labels-idx1-ubyte"),
                Split::Test,
            )?;
            Ok((
                truncate(train, *limit_train)?,
                truncate(test, *limit_test)?,
            ))
        }
        DatasetConfig::Cifar10 { train_files, test_files, standardize } => {
            let train_paths: Vec<&Path> = train_files.iter().map(Path::new).collect();
            let test_paths: Vec<&Path> = test_files.iter().map(Path::new).collect();
            Ok((
                load_cifar10_binary(&train_paths, *standardize, Split::Train)?,
                load_cifar10_binary(&test_paths, *standardize, Split::Test)?,
            ))
        }
        DatasetConfig::Glyphs { n_train, n_test } => {
            let (train, test) = make_glyph_digits(*n_train, *n_test, derive_seed(seed, 0x61f))?;
            Ok((train, test))
        }
    }
}

fn truncate(data: Dataset, limit: Option<usize>) -> Result<Dataset> {
    let Some(n) = limit else { return Ok(data) };
    if n == 0 || n >= data.len() {
        return Ok(data);
    }
    let idx: Vec<usize> = (0..n).collect();
    let (inputs, labels) = data.gather(&idx);
    Ok(Dataset::new(inputs, labels, data.class_count, data.split)?)
}

/// Builds the network the config describes for the given dataset.
pub fn build_network(config: &ExperimentConfig, data: &Dataset) -> Result<Network<f32>> {
    let specs = config.module_specs(data.sample_shape(), data.class_count)?;
    Ok(Network::build(&specs, data.sample_shape())?)
}

/// Runs the configured experiment and writes artifacts atomically under the
/// output directory (written to a temp sibling, then renamed into place).
/// On failure, partial artifacts are removed and the error is kept in a
/// `<dir>.error.log` file next to the would-be output.
pub fn run_experiment(
    config: &ExperimentConfig,
    out_override: Option<&Path>,
    seed_override: Option<u64>,
) -> Result<RunArtifacts> {
    let mut config = config.clone();
    if let Some(seed) = seed_override {
        config.train.seed = seed;
    }
    let out_dir: PathBuf = out_override
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(&config.output.dir));
    if out_dir.exists() {
        return Err(CliError::Output(format!(
            "output directory {} already exists",
            out_dir.display()
        )));
    }
    run_pipeline(&config, &out_dir).inspect_err(|e| {
        let parent = out_dir.parent().unwrap_or(Path::new("."));
        let log = parent.join(format!(
            "{}.error.log",
            out_dir.file_name().and_then(|s| s.to_str()).unwrap_or("run")
        ));
        if std::fs::create_dir_all(parent).is_ok() {
            let _ = std::fs::write(&log, format!("{e}\n"));
        }
    })
}

fn run_pipeline(config: &ExperimentConfig, out_dir: &Path) -> Result<RunArtifacts> {
    let (train_data, test_data) = build_datasets(config)?;
    let mut net = build_network(config, &train_data)?;
    let train_config = config.train_config()?;
    let report = train(&mut net, &train_data, Some(&test_data), &train_config)?;

    let probe = if config.analysis.probe {
        Some(probe_network(
            &net,
            &train_data,
            &test_data,
            &ProbeConfig { seed: config.train.seed, ..ProbeConfig::default() },
        )?)
    } else {
        None
    };

    let bound = if config.analysis.bound_check {
        Some(final_layer_bound_check(&net, &train_data, config)?)
    } else {
        None
    };

    write_artifacts(config, out_dir, &net, &report, probe.as_ref(), bound)
}

/// Soft-nearest-neighbor inequality check on the final representation over a
/// fixed train subset.
fn final_layer_bound_check(
    net: &Network<f32>,
    data: &Dataset,
    config: &ExperimentConfig,
) -> Result<BoundSection> {
    let subset = config.analysis.eval_subset.min(data.len());
    // Use a class-balanced prefix: take equal counts per class.
    let per_class = subset / data.class_count;
    if per_class == 0 {
        return Err(CliError::Config("bound check subset too small".into()));
    }
    let mut picked: Vec<usize> = Vec::new();
    let mut counts = vec![0usize; data.class_count];
    for i in 0..data.len() {
        let k = data.labels[i].index();
        if counts[k] < per_class {
            counts[k] += 1;
            picked.push(i);
        }
    }
    let (inputs, labels) = gather(data, &picked);
    let trace = net.forward_full(&inputs)?;
    let z = pooled_matrix(trace.representation(net.module_count() - 1))?;
    let check = snn_hsic_bound_check(
        &z,
        &labels,
        data.class_count,
        config.analysis.bound_sigma,
        config.analysis.bound_mc,
        derive_seed(config.train.seed, 0xB0B0),
        None,
    )?;
    Ok(BoundSection {
        lhs: check.lhs,
        rhs: check.rhs,
        holds: check.holds,
        mc_stderr: check.mc_stderr,
        hsic_yz: check.hsic_yz,
        sigma: config.analysis.bound_sigma,
        n_mc: config.analysis.bound_mc,
    })
}

fn gather(data: &Dataset, idx: &[usize]) -> (Tensor32, Vec<ClassLabel>) {
    data.gather(idx)
}

fn write_artifacts(
    config: &ExperimentConfig,
    out_dir: &Path,
    net: &Network<f32>,
    report: &TrainReport,
    probe: Option<&ProbeResult>,
    bound: Option<BoundSection>,
) -> Result<RunArtifacts> {
    let parent = out_dir.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(parent)?;
    let tmp = parent.join(format!(
        ".tmp-{}-{}",
        out_dir.file_name().and_then(|s| s.to_str()).unwrap_or("run"),
        std::process::id()
    ));
    if tmp.exists() {
        std::fs::remove_dir_all(&tmp)?;
    }
    let result = write_into(config, &tmp, out_dir, net, report, probe, bound);
    match result {
        Ok(artifacts) => {
            std::fs::rename(&tmp, out_dir)?;
            Ok(artifacts)
        }
        Err(e) => {
            let _ = std::fs::remove_dir_all(&tmp);
            Err(e)
        }
    }
}

fn write_into(
    config: &ExperimentConfig,
    tmp: &Path,
    final_dir: &Path,
    net: &Network<f32>,
    report: &TrainReport,
    probe: Option<&ProbeResult>,
    bound: Option<BoundSection>,
) -> Result<RunArtifacts> {
    std::fs::create_dir_all(tmp)?;
    let final_path = |name: &str| final_dir.join(name);

    // Resolved config echo.
    std::fs::write(tmp.join("config.resolved.toml"), config.resolved_toml()?)?;

    // Trajectory CSV.
    let mut trajectory_path = None;
    if let Some(traj) = &report.trajectory {
        let mut buf = Vec::new();
        traj.to_csv(&mut buf).map_err(CliError::Core)?;
        std::fs::write(tmp.join("trajectory.csv"), buf)?;
        trajectory_path = Some(final_path("trajectory.csv"));
    }

    // Probe CSV.
    let mut probe_path = None;
    if let Some(p) = probe {
        let mut text = String::from("layer,train_accuracy,test_accuracy\n");
        for (i, (tr, te)) in p.train_accuracy.iter().zip(&p.test_accuracy).enumerate() {
            text.push_str(&format!("{i},{tr},{te}\n"));
        }
        std::fs::write(tmp.join("probe.csv"), text)?;
        probe_path = Some(final_path("probe.csv"));
    }

    // Plots.
    let mut plot_paths = Vec::new();
    if config.output.plots {
        if let Some(traj) = &report.trajectory {
            let plots_dir = tmp.join("plots");
            std::fs::create_dir_all(&plots_dir)?;
            for layer in 0..traj.layer_count() {
                let svg = plot::layer_svg(traj, layer)?;
                std::fs::write(plots_dir.join(format!("layer{layer}.svg")), svg)?;
                plot_paths.push(final_path(&format!("plots/layer{layer}.svg")));
            }
            let combined = plot::combined_svg(traj)?;
            std::fs::write(plots_dir.join("combined.svg"), combined)?;
            plot_paths.push(final_path("plots/combined.svg"));
        }
        if let Some(p) = probe {
            let svg = plot::probe_svg(&p.train_accuracy, &p.test_accuracy)?;
            let plots_dir = tmp.join("plots");
            std::fs::create_dir_all(&plots_dir)?;
            std::fs::write(plots_dir.join("probe.svg"), svg)?;
            plot_paths.push(final_path("plots/probe.svg"));
        }
    }

    // Checkpoint.
    let mut checkpoint_path = None;
    if config.output.checkpoint {
        net.save_checkpoint(&tmp.join("checkpoint.ipnn"))
            .map_err(CliError::Core)?;
        checkpoint_path = Some(final_path("checkpoint.ipnn"));
    }

    // Report.
    let report_json = Report {
        schema_version: REPORT_SCHEMA_VERSION,
        library_version: env!("CARGO_PKG_VERSION"),
        config,
        metrics: MetricsSection {
            epochs: &report.epochs,
            final_train_accuracy: report.final_train_accuracy,
            final_test_accuracy: report.final_test_accuracy,
        },
        probe,
        bound_check: bound,
        trajectory: report.trajectory.as_ref().map(|t| TrajectorySection {
            epsilon: t.settings.epsilon,
            eval_subset: t.eval_subset,
            eval_set: "train",
            points: t.points.len(),
            seed: t.seed,
            kernel_x: format!("{:?}", t.settings.kernels.x),
            kernel_z: format!("{:?}", t.settings.kernels.z),
            kernel_y: format!("{:?}", t.settings.kernels.y),
        }),
        timing: TimingSection {
            wall_clock_secs: report.wall_clock_secs,
            note: "non-deterministic",
        },
    };
    let json = serde_json::to_string_pretty(&report_json)?;
    validate_report(&serde_json::from_str(&json)?)?;
    std::fs::write(tmp.join("report.json"), json)?;

    Ok(RunArtifacts {
        dir: final_dir.to_path_buf(),
        report: final_path("report.json"),
        trajectory: trajectory_path,
        probe: probe_path,
        plots: plot_paths,
        checkpoint: checkpoint_path,
    })
}

/// Structural validation of a report against the published schema version.
pub fn validate_report(value: &serde_json::Value) -> Result<()> {
    let obj = value
        .as_object()
        .ok_or_else(|| CliError::Output("report is not an object".into()))?;
    let version = obj
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| CliError::Output("report lacks schema_version".into()))?;
    if version != REPORT_SCHEMA_VERSION as u64 {
        return Err(CliError::Output(format!(
            "unsupported report schema version {version}"
        )));
    }
    for key in ["library_version", "config", "metrics", "timing"] {
        if !obj.contains_key(key) {
            return Err(CliError::Output(format!("report lacks '{key}'")));
        }
    }
    let metrics = obj["metrics"]
        .as_object()
        .ok_or_else(|| CliError::Output("metrics is not an object".into()))?;
    if !metrics.get("epochs").map(|e| e.is_array()).unwrap_or(false) {
        return Err(CliError::Output("metrics.epochs is not an array".into()));
    }
    Ok(())
}
