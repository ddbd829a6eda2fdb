use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use infoplane_cli::config::ExperimentConfig;
use infoplane_cli::error::{CliError, Result};
use infoplane_cli::{plot, presets, run};

/// Train small networks end-to-end or layer-wise and record normalized-HSIC
/// information-plane trajectories.
#[derive(Parser)]
#[command(name = "infoplane", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a config file or a named preset.
    Run {
        /// Path to a TOML experiment config.
        config: Option<PathBuf>,
        /// Use a shipped preset instead of a config file.
        #[arg(long)]
        preset: Option<String>,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated seed list; each seed runs in its own
        /// `seed-<s>` subdirectory.
        #[arg(long)]
        seeds: Option<String>,
        /// Worker threads for multi-seed fan-out.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Output directory (overrides the config's output block).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render information-plane SVGs from a trajectory CSV.
    Plot {
        trajectory: PathBuf,
        /// Output directory for the SVG files.
        #[arg(long, default_value = "plots")]
        out: PathBuf,
    },
    /// Linear-probe a checkpoint over the dataset described by a config.
    Probe {
        checkpoint: PathBuf,
        /// Config file providing the dataset and model blocks.
        dataset: PathBuf,
        /// Where to write probe.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>, preset: Option<&str>) -> Result<ExperimentConfig> {
    match (path, preset) {
        (Some(_), Some(_)) => Err(CliError::Config(
            "pass either a config file or --preset, not both".into(),
        )),
        (Some(p), None) => ExperimentConfig::load(p),
        (None, Some(name)) => presets::preset(name),
        (None, None) => Err(CliError::Config(
            format!(
                "pass a config file or --preset NAME (available: {})",
                presets::PRESET_NAMES.join(", ")
            ),
        )),
    }
}

fn cmd_run(
    config: Option<PathBuf>,
    preset: Option<String>,
    seed: Option<u64>,
    seeds: Option<String>,
    jobs: usize,
    out: Option<PathBuf>,
) -> Result<()> {
    let config = load_config(config.as_deref(), preset.as_deref())?;
    match seeds {
        None => {
            let artifacts = run::run_experiment(&config, out.as_deref(), seed)?;
            println!("wrote {}", artifacts.dir.display());
            Ok(())
        }
        Some(list) => {
            let seed_values: Vec<u64> = list
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<u64>()
                        .map_err(|_| CliError::Config(format!("bad seed '{s}'")))
                })
                .collect::<Result<_>>()?;
            if seed_values.is_empty() {
                return Err(CliError::Config("empty seed list".into()));
            }
            let base = out.unwrap_or_else(|| PathBuf::from(&config.output.dir));
            let jobs = jobs.max(1);
            let mut failures = Vec::new();
            for chunk in seed_values.chunks(jobs) {
                let results: Vec<(u64, Result<run::RunArtifacts>)> =
                    std::thread::scope(|scope| {
                        let handles: Vec<_> = chunk
                            .iter()
                            .map(|&s| {
                                let config = &config;
                                let dir = base.join(format!("seed-{s}"));
                                scope.spawn(move || {
                                    (s, run::run_experiment(config, Some(&dir), Some(s)))
                                })
                            })
                            .collect();
                        handles
                            .into_iter()
                            .map(|h| h.join().expect("worker thread panicked"))
                            .collect()
                    });
                for (s, result) in results {
                    match result {
                        Ok(artifacts) => println!("seed {s}: wrote {}", artifacts.dir.display()),
                        Err(e) => {
                            eprintln!("seed {s}: {e}");
                            failures.push(s);
                        }
                    }
                }
            }
            if failures.is_empty() {
                Ok(())
            } else {
                Err(CliError::Output(format!("failed seeds: {failures:?}")))
            }
        }
    }
}

fn cmd_plot(trajectory: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(trajectory)?;
    let traj = plot::parse_trajectory_csv(&text)?;
    std::fs::create_dir_all(out)?;
    for layer in 0..traj.layer_count() {
        let svg = plot::layer_svg(&traj, layer)?;
        std::fs::write(out.join(format!("layer{layer}.svg")), svg)?;
    }
    std::fs::write(out.join("combined.svg"), plot::combined_svg(&traj)?)?;
    println!("wrote {} layer panels to {}", traj.layer_count(), out.display());
    Ok(())
}

fn cmd_probe(checkpoint: &Path, dataset: &Path, out: Option<&Path>) -> Result<()> {
    use infoplane_core::analysis::{probe_network, ProbeConfig};
    let config = ExperimentConfig::load(dataset)?;
    let (train_data, test_data) = run::build_datasets(&config)?;
    let mut net = run::build_network(&config, &train_data)?;
    net.load_checkpoint(checkpoint).map_err(CliError::Core)?;
    let probe = probe_network(
        &net,
        &train_data,
        &test_data,
        &ProbeConfig { seed: config.train.seed, ..ProbeConfig::default() },
    )
    .map_err(CliError::Core)?;
    let mut text = String::from("layer,train_accuracy,test_accuracy\n");
    for (i, (tr, te)) in probe
        .train_accuracy
        .iter()
        .zip(&probe.test_accuracy)
        .enumerate()
    {
        text.push_str(&format!("{i},{tr},{te}\n"));
        println!("layer {i}: train {tr:.4}, test {te:.4}");
    }
    if let Some(path) = out {
        std::fs::write(path, text)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, preset, seed, seeds, jobs, out } => {
            cmd_run(config, preset, seed, seeds, jobs, out)
        }
        Command::Plot { trajectory, out } => cmd_plot(&trajectory, &out),
        Command::Probe { checkpoint, dataset, out } => {
            cmd_probe(&checkpoint, &dataset, out.as_deref())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
