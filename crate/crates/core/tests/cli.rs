use std::path::Path;
use std::process::Command;

use clap::Parser;
use multipath::cli::{run, Cli};
use multipath::model::{LstmMdl, ModelConfig};
use multipath::seed::derive_seed;
use multipath::synthdata::read_dataset_csv;

fn cli(out: &Path, args: &[&str]) -> Vec<u8> {
    let mut argv = vec!["multipath", "--out", out.to_str().unwrap(), "--seed", "9"];
    argv.extend_from_slice(args);
    let mut stdout = Vec::new();
    run(Cli::parse_from(argv), &mut stdout).unwrap();
    stdout
}

fn binary(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_multipath")).args(args).output().unwrap()
}

#[test]
fn gen_data_is_deterministic_and_sized() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        cli(dir.path(), &["--set", "data.trajectories=25", "--set", "data.condition=heavy_left", "gen-data"]);
    }
    let csv_a = std::fs::read(a.path().join("heavy_left.csv")).unwrap();
    assert_eq!(csv_a, std::fs::read(b.path().join("heavy_left.csv")).unwrap());
    assert!(a.path().join("heavy_left.spec.json").exists());
    let data = read_dataset_csv(&a.path().join("heavy_left.csv")).unwrap();
    assert_eq!(data.len(), 25);
    assert!(data.iter().enumerate().all(|(i, t)| t.id == i as u64 && t.len() == 70));
}

#[test]
fn zero_epochs_saves_the_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    cli(out, &["--set", "data.trajectories=4", "gen-data"]);
    cli(out, &["--set", "train.epochs=0", "--set", "model.hidden_size=6", "train"]);
    let saved = LstmMdl::load(&out.join("tmaze.ckpt")).unwrap();
    let config = ModelConfig { hidden_size: 6, ..ModelConfig::default() };
    let expected = LstmMdl::init(config, derive_seed(9, "model/tmaze")).unwrap();
    assert_eq!(saved, expected);
    let loss = std::fs::read_to_string(out.join("tmaze.loss.csv")).unwrap();
    assert_eq!(loss.trim(), "epoch,loss");
}

#[test]
fn predict_one_particle_one_step() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    cli(out, &["--set", "data.trajectories=6", "gen-data"]);
    cli(out, &["--set", "train.epochs=1", "--set", "model.hidden_size=4", "train"]);
    let stdout = cli(out, &["--set", "predict.horizon=1", "--set", "predict.particles=1", "predict"]);
    assert!(String::from_utf8(stdout).unwrap().contains("1 particles"));
    let csv = std::fs::read_to_string(out.join("particles.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "step,x,y,weight");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("1,"));
    let jsonl = std::fs::read_to_string(out.join("prediction.jsonl")).unwrap();
    let record: serde_json::Value = serde_json::from_str(jsonl.lines().next().unwrap()).unwrap();
    assert_eq!(record["step"], 1);
    assert_eq!(record["particles"].as_array().unwrap().len(), 1);

    cli(out, &["--set", "heatmap.cell_size=0.5", "heatmap"]);
    let pgm = std::fs::read(out.join("heatmap.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5"));
}

#[test]
fn evaluate_single_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    for cond in ["tmaze", "posbias_gap"] {
        let c = format!("data.condition={cond}");
        cli(out, &["--set", &c, "--set", "data.trajectories=30", "gen-data"]);
        cli(out, &["--set", &c, "--set", "train.epochs=1", "--set", "model.hidden_size=4", "train"]);
    }
    let args = [
        "--set", "evaluate.conditions=['tmaze', 'posbias_gap']",
        "--set", "evaluate.pool=40",
        "--set", "evaluate.trajectories=3",
        "--set", "evaluate.particles=20",
        "--set", "evaluate.runs=1",
        "--set", "evaluate.neighbors=5",
        "evaluate", "--only", "stratified/temperature:0.01",
    ];
    cli(out, &args);
    let results = std::fs::read_to_string(out.join("results.csv")).unwrap();
    let rows: Vec<&str> = results.lines().collect();
    assert_eq!(rows.len(), 2, "{results}");
    assert!(rows[1].starts_with("stratified,temperature,0.01,"));
    let first = std::fs::read(out.join("results.csv")).unwrap();
    cli(out, &args);
    assert_eq!(first, std::fs::read(out.join("results.csv")).unwrap());
}

#[test]
fn invalid_config_exits_with_one_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "[data]\ntrajectories = 5\nbogus_field = 3\n").unwrap();
    let o = binary(&["--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "gen-data"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus_field"));
    assert!(!out.join("tmaze.csv").exists());

    let o = binary(&["--out", out.to_str().unwrap(), "--set", "data.spec.arm_lenght=3", "gen-data"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("data.spec.arm_lenght"));

    let o = binary(&["--out", out.to_str().unwrap(), "--set", "predict.weighting=temperature:-1", "predict"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_inputs_are_runtime_failures() {
    let dir = tempfile::tempdir().unwrap();
    let o = binary(&["--out", dir.path().to_str().unwrap(), "train"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(std::fs::read_dir(dir.path()).unwrap().next().is_none());
}
