//! Smoke tests for the installed binary: subcommands, exit codes, and the
//! plot/probe round trips.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_infoplane"))
}

#[test]
fn unknown_preset_exits_nonzero() {
    let out = bin().args(["run", "--preset", "nope"]).output().unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("unknown preset"), "{stderr}");
}

#[test]
fn bad_config_key_exits_nonzero_and_names_key() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(
        &config,
        r#"
        [dataset]
        kind = "rings"

        [model]
        kind = "mlp"
        hidden = [4]

        [trian]
        mode = "e2e"
    "#,
    )
    .unwrap();
    let out = bin().arg("run").arg(&config).output().unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("trian"), "{stderr}");
}

#[test]
fn plot_renders_from_trajectory_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("trajectory.csv");
    std::fs::write(
        &csv,
        "epoch,layer,nhsic_xz,nhsic_yz,eval_set\n0,0,0.1,0.2,train\n1,0,0.3,0.4,train\n",
    )
    .unwrap();
    let out_dir = dir.path().join("plots");
    let out = bin()
        .arg("plot")
        .arg(&csv)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let svg = std::fs::read_to_string(out_dir.join("layer0.svg")).unwrap();
    assert_eq!(svg.matches("class=\"pt\"").count(), 2);
    assert!(out_dir.join("combined.svg").exists());
}

#[test]
fn run_then_probe_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("exp.toml");
    let out_dir = dir.path().join("run");
    std::fs::write(
        &config_path,
        format!(
            r#"
            [dataset]
            kind = "rings"
            n-per-class = 40
            test-n-per-class = 20

            [model]
            kind = "mlp"
            hidden = [8]

            [train]
            mode = "e2e"
            epochs = 2
            batch-size = 16
            seed = 3

            [analysis]
            record-every = 0

            [output]
            dir = "{}"
        "#,
            out_dir.display()
        ),
    )
    .unwrap();
    let out = bin().arg("run").arg(&config_path).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("report.json").exists());
    assert!(out_dir.join("checkpoint.ipnn").exists());

    let probe_csv = dir.path().join("probe.csv");
    let out = bin()
        .arg("probe")
        .arg(out_dir.join("checkpoint.ipnn"))
        .arg(&config_path)
        .arg("--out")
        .arg(&probe_csv)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&probe_csv).unwrap();
    assert!(text.starts_with("layer,train_accuracy,test_accuracy\n"));
    assert_eq!(text.lines().count(), 3);
}
