//! End-to-end pipeline through the compiled binary: synth -> train ->
//! generate -> report, exit codes, and determinism contracts.

use std::path::Path;
use std::process::{Command, Output};

use hydroscen::calendar::YearMonth;
use hydroscen::data::synth::{synth_ensemble, SynthSpec};
use hydroscen::data::save_ensemble;
use hydroscen::scenario::ScenarioSet;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hydroscen"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn demo_spec() -> SynthSpec {
    SynthSpec {
        grid_rows: 2,
        grid_cols: 2,
        n_plants: 2,
        n_months: 168,
        start_year: 2000,
        start_month: 1,
        seasonal_base: vec![4.0, 5.0, 7.0, 9.0, 8.0, 6.0, 5.0, 4.0, 3.5, 3.0, 3.0, 3.5],
        sensitivity: vec![
            vec![0.004, 0.001],
            vec![0.003, 0.002],
            vec![0.0, 0.004],
            vec![0.002, 0.003],
        ],
        lag: 0,
        noise_scale: 0.3,
        precip_base: (0..12)
            .map(|m| 120.0 + 80.0 * (2.0 * std::f64::consts::PI * m as f64 / 12.0).sin())
            .collect(),
        precip_noise: 0.4,
        temp_base: (0..12)
            .map(|m| 22.0 + 6.0 * (2.0 * std::f64::consts::PI * (m as f64 + 3.0) / 12.0).sin())
            .collect(),
        temp_noise: 1.5,
    }
}

fn write_config(dir: &Path, spec: &SynthSpec, n_scen: usize) -> std::path::PathBuf {
    let cfg = serde_json::json!({
        "seed": 11,
        "quantiles": [0.10, 0.25, 0.60, 0.95],
        "paths": {
            "forcing": dir.join("data/forcing.csv"),
            "history": dir.join("data/history.csv"),
            "ensemble_dir": dir.join("ensemble"),
            "checkpoint": dir.join("out/checkpoint.json"),
            "out_dir": dir.join("out")
        },
        "model": { "embedding_dim": 4, "hidden_dim": 8 },
        "train": {
            "learning_rate": 0.01,
            "max_epochs": 40,
            "patience": 40,
            "dropout_rate": 0.1,
            "train_window": { "start_year": 2000, "end_year": 2009 },
            "valid_window": { "start_year": 2010, "end_year": 2013 }
        },
        "generate": { "n_scen": 5, "diagonal_phi_y": false },
        "synth": spec
    });
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn setup(dir: &Path) -> std::path::PathBuf {
    let spec = demo_spec();
    let config = write_config(dir, &spec, 5);
    // synth writes into out/, the pipeline reads from data/: move the files
    let out = run(&[
        "synth",
        "--config",
        config.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "synth failed: {out:?}");
    std::fs::create_dir_all(dir.join("data")).unwrap();
    for f in ["forcing.csv", "history.csv", "ground_truth.json"] {
        std::fs::rename(dir.join("out").join(f), dir.join("data").join(f)).unwrap();
    }
    let ens = synth_ensemble(&spec, YearMonth::new(2014, 1).unwrap(), 6, 4, 123).unwrap();
    save_ensemble(&ens, dir.join("ensemble")).unwrap();
    config
}

#[test]
fn synth_writes_three_files_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &demo_spec(), 5);
    let out = run(&["synth", "--config", config.to_str().unwrap()]);
    assert!(out.status.success());
    let read = |f: &str| std::fs::read(dir.path().join("out").join(f)).unwrap();
    let (a1, a2, a3) = (read("forcing.csv"), read("history.csv"), read("ground_truth.json"));
    assert!(!a1.is_empty() && !a2.is_empty() && !a3.is_empty());
    let out = run(&["synth", "--config", config.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(a1, read("forcing.csv"));
    assert_eq!(a2, read("history.csv"));
    assert_eq!(a3, read("ground_truth.json"));
    // seed override changes the output
    let out = run(&["synth", "--config", config.to_str().unwrap(), "--seed", "99"]);
    assert!(out.status.success());
    assert_ne!(a2, read("history.csv"));
}

#[test]
fn invalid_synth_spec_exits_2_with_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = demo_spec();
    spec.noise_scale = -1.0;
    let config = write_config(dir.path(), &spec, 5);
    let out = run(&["synth", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error:"), "stderr: {stderr}");
}

#[test]
fn overlapping_windows_fail_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path());
    let text = std::fs::read_to_string(&config).unwrap();
    let text = text.replace("\"start_year\": 2010", "\"start_year\": 2009");
    std::fs::write(&config, text).unwrap();
    let out = run(&["train", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("out/checkpoint.json").exists());
}

#[test]
fn full_pipeline_train_generate_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path());
    let cfg_s = config.to_str().unwrap();

    // train twice: checkpoint bytes identical under the same seed
    let out = run(&["train", "--config", cfg_s]);
    assert!(out.status.success(), "train failed: {out:?}");
    let ckpt1 = std::fs::read(dir.path().join("out/checkpoint.json")).unwrap();
    assert!(dir.path().join("out/train_report.csv").exists());
    let out = run(&["train", "--config", cfg_s]);
    assert!(out.status.success());
    let ckpt2 = std::fs::read(dir.path().join("out/checkpoint.json")).unwrap();
    assert_eq!(ckpt1, ckpt2, "training is not reproducible");

    // generate with reordering
    let out = run(&["generate", "--config", cfg_s]);
    assert!(out.status.success(), "generate failed: {out:?}");
    let scen_path = dir.path().join("out/scenarios.csv");
    let reordered = ScenarioSet::load_csv(&scen_path).unwrap();
    assert_eq!(reordered.n_traj(), 4);
    assert_eq!(reordered.n_scen, 5);
    assert_eq!(reordered.horizon, 6);
    assert!(reordered.provenance.reordered);
    let rows = std::fs::read_to_string(&scen_path).unwrap().lines().count() - 1;
    assert_eq!(rows, 4 * 5 * 6 * 2);

    // --no-reorder keeps every per-(trajectory, month, plant) marginal
    let out = run(&["generate", "--config", cfg_s, "--no-reorder"]);
    assert!(out.status.success());
    let plain = ScenarioSet::load_csv(&scen_path).unwrap();
    assert!(!plain.provenance.reordered);
    for tr in 0..4 {
        for t in 0..6 {
            for p in 0..2 {
                let mut a: Vec<f64> = (0..5).map(|s| reordered.value(tr, s, t, p)).collect();
                let mut b: Vec<f64> = (0..5).map(|s| plain.value(tr, s, t, p)).collect();
                a.sort_by(|x, y| x.partial_cmp(y).unwrap());
                b.sort_by(|x, y| x.partial_cmp(y).unwrap());
                assert_eq!(a, b, "marginals differ at tr={tr} t={t} p={p}");
            }
        }
    }

    // report emits coverage with the paper's reference columns + energy + bands
    let out = run(&["report", "--config", cfg_s]);
    assert!(out.status.success(), "report failed: {out:?}");
    let coverage = std::fs::read_to_string(dir.path().join("out/coverage.csv")).unwrap();
    let mut lines = coverage.lines();
    assert_eq!(
        lines.next().unwrap(),
        "window,plant,n_months,ref_mid,obs_mid,ref_below,obs_below,ref_above,obs_above"
    );
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[3], "35.0");
        assert_eq!(fields[5], "10.0");
        assert_eq!(fields[7], "5.0");
    }
    assert!(dir.path().join("out/inflow_energy.csv").exists());
    assert!(dir.path().join("out/bands/bands_P001.csv").exists());
    assert!(dir.path().join("out/bands/bands_P001.svg").exists());
    let energy = std::fs::read_to_string(dir.path().join("out/inflow_energy.csv")).unwrap();
    assert!(energy.lines().any(|l| l.starts_with("history,")));
    assert!(energy.lines().any(|l| l.starts_with("scenario,")));

    // deterministic rerun of report
    let cov1 = std::fs::read(dir.path().join("out/coverage.csv")).unwrap();
    let out = run(&["report", "--config", cfg_s]);
    assert!(out.status.success());
    let cov2 = std::fs::read(dir.path().join("out/coverage.csv")).unwrap();
    assert_eq!(cov1, cov2);
}

#[test]
fn missing_checkpoint_is_an_actionable_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path());
    let out = run(&["generate", "--config", config.to_str().unwrap()]);
    assert_ne!(out.status.code(), Some(0));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("checkpoint"),
        "stderr should name the missing piece: {stderr}"
    );
}
