//! End-to-end runner behavior: artifact layout, determinism, schema
//! validation, and failure cleanup.

use infoplane_cli::config::ExperimentConfig;
use infoplane_cli::{run_experiment, validate_report};

fn rings_config(dir: &str) -> ExperimentConfig {
    let text = format!(
        r#"
        [dataset]
        kind = "rings"
        n-per-class = 60
        test-n-per-class = 30

        [model]
        kind = "mlp"
        hidden = [8]

        [train]
        mode = "layerwise"
        epochs = 3
        batch-size = 32
        seed = 5

        [analysis]
        record-every = 1
        eval-subset = 64
        eval-batch = 32
        probe = true

        [output]
        dir = "{dir}"
    "#
    );
    ExperimentConfig::from_toml(&text).unwrap()
}

#[test]
fn run_emits_all_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("exp");
    let config = rings_config(out.to_str().unwrap());
    let artifacts = run_experiment(&config, None, None).unwrap();

    assert!(artifacts.report.exists());
    assert!(artifacts.trajectory.as_ref().unwrap().exists());
    assert!(artifacts.probe.as_ref().unwrap().exists());
    assert!(artifacts.checkpoint.as_ref().unwrap().exists());
    assert!(!artifacts.plots.is_empty());
    for plot in &artifacts.plots {
        assert!(plot.exists(), "{} missing", plot.display());
    }

    // Trajectory rows: (epochs + initial snapshot) x layers.
    let csv = std::fs::read_to_string(artifacts.trajectory.unwrap()).unwrap();
    let rows = csv.lines().count() - 1;
    assert_eq!(rows, 4 * 2, "one row per (epoch, layer)");

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&artifacts.report).unwrap()).unwrap();
    validate_report(&report).unwrap();
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["metrics"]["epochs"].as_array().unwrap().len(), 3);
}

#[test]
fn identical_seeds_give_identical_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    let config = rings_config("unused");
    let a = run_experiment(&config, Some(&out_a), Some(33)).unwrap();
    let b = run_experiment(&config, Some(&out_b), Some(33)).unwrap();

    let traj_a = std::fs::read(a.trajectory.unwrap()).unwrap();
    let traj_b = std::fs::read(b.trajectory.unwrap()).unwrap();
    assert_eq!(traj_a, traj_b);

    let report_a: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&a.report).unwrap()).unwrap();
    let report_b: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&b.report).unwrap()).unwrap();
    assert_eq!(report_a["metrics"], report_b["metrics"]);

    let plots_a = std::fs::read(&a.plots[0]).unwrap();
    let plots_b = std::fs::read(&b.plots[0]).unwrap();
    assert_eq!(plots_a, plots_b);
}

#[test]
fn existing_output_directory_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("exists");
    std::fs::create_dir_all(&out).unwrap();
    let config = rings_config("unused");
    assert!(run_experiment(&config, Some(&out), None).is_err());
}

#[test]
fn failing_run_leaves_no_partial_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("broken");
    let mut config = rings_config("unused");
    // Head dimension incompatible with cross entropy on 2 classes.
    config.model = infoplane_cli::config::ModelConfig::Mlp {
        hidden: vec![8],
        heads: infoplane_cli::config::HeadKind::Linear,
        head_dim: Some(5),
        head_hidden: 256,
    };
    assert!(run_experiment(&config, Some(&out), None).is_err());
    assert!(!out.exists());
    // No partial output or temp directories remain, only the error log.
    let leftovers: Vec<String> = std::fs::read_dir(tmp.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(leftovers, vec!["broken.error.log".to_string()], "{leftovers:?}");
    let log = std::fs::read_to_string(tmp.path().join("broken.error.log")).unwrap();
    assert!(log.contains("head produces"), "{log}");
}

#[test]
fn glyph_dataset_runs_and_probes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("glyphs");
    let text = format!(
        r#"
        [dataset]
        kind = "glyphs"
        n-train = 200
        n-test = 50

        [model]
        kind = "mlp"
        hidden = [32]

        [train]
        mode = "e2e"
        epochs = 2
        batch-size = 32
        seed = 1

        [analysis]
        record-every = 0
        probe = true

        [output]
        dir = "{}"
    "#,
        out.to_str().unwrap()
    );
    let config = ExperimentConfig::from_toml(&text).unwrap();
    let artifacts = run_experiment(&config, None, None).unwrap();
    assert!(artifacts.trajectory.is_none());
    let probe_text = std::fs::read_to_string(artifacts.probe.unwrap()).unwrap();
    assert!(probe_text.starts_with("layer,train_accuracy,test_accuracy\n"));
    assert_eq!(probe_text.lines().count(), 3); // header + 2 modules
}
