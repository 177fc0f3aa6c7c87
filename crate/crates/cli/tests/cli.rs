use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hyperflux::checkpoint::Checkpoint;
use hyperflux::forecast::NodeForecast;
use hyperflux::model::Model;
use hyperflux::stream::SynthConfig;
use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_hyperflux"));
    c.env_remove("HYPERFLUX_SEED").env("RUST_LOG", "warn");
    c
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        Workspace {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// A small planted stream written by the `synth` command.
    fn dataset(&self) -> PathBuf {
        let p = self.path("data.jsonl");
        let out = run(bin().args(["synth", "--node-count", "20", "--groups-per-community", "2", "--hyperedges", "400", "--output"]).arg(&p));
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        p
    }

    fn train(&self, data: &Path, report: &str, extra: &[&str]) -> Output {
        run(bin()
            .args(["train", "--dataset"])
            .arg(data)
            .arg("--report-dir")
            .arg(self.path(report))
            .args(["--epochs", "2", "--d", "8", "--batch-size", "32", "--negatives", "5"])
            .args(extra))
    }
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn synth_then_inspect_reports_the_generator_counts() {
    let ws = Workspace::new();
    let data = ws.dataset();
    let out = run(bin().args(["inspect", "--json", "--dataset"]).arg(&data));
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let stats: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(stats["nodes"], 20);
    assert_eq!(stats["hyperedges"], 400);

    let out = run(bin().args(["inspect", "--dataset"]).arg(&data));
    assert!(String::from_utf8_lossy(&out.stdout).contains("max concurrency"));
}

#[test]
fn inspecting_an_empty_file_fails() {
    let ws = Workspace::new();
    let p = ws.path("empty.jsonl");
    fs::write(&p, "").unwrap();
    let out = run(bin().args(["inspect", "--dataset"]).arg(&p));
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("error"));
}

#[test]
fn missing_dataset_exits_with_two() {
    let ws = Workspace::new();
    let out = ws.train(&ws.path("absent.jsonl"), "r", &[]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("dataset not found"));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(code(&run(bin().arg("bogus"))), 2);
    assert_eq!(code(&run(bin().args(["train", "--epochs", "many"]))), 2);
}

#[test]
fn train_writes_checkpoint_curve_and_config() {
    let ws = Workspace::new();
    let data = ws.dataset();
    let out = ws.train(&data, "r", &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let ckpt = Checkpoint::load(&ws.path("r/checkpoint.json")).unwrap();
    assert_eq!(ckpt.config.epochs, 2);
    let curve = fs::read_to_string(ws.path("r/loss_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 3);
    let config = json(&ws.path("r/config.json"));
    assert_eq!(config["d"], 8);
    assert_eq!(config["negatives"], 5);
}

#[test]
fn zero_epochs_checkpoint_equals_initialization() {
    let ws = Workspace::new();
    let data = ws.dataset();
    let out = ws.train(&data, "r", &["--epochs", "0", "--seed", "3"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let ckpt = Checkpoint::load(&ws.path("r/checkpoint.json")).unwrap();
    let (_, store) = Model::new(ckpt.dims.clone(), 3).unwrap();
    assert_eq!(ckpt.params, store.to_records());
}

#[test]
fn config_file_flags_and_seed_fallback() {
    let ws = Workspace::new();
    let data = ws.dataset();
    let cfg = ws.path("run.json");
    fs::write(&cfg, r#"{"epochs": 5, "d": 8, "batch_size": 32}"#).unwrap();

    // Flag beats file; the environment fills the unset seed.
    let out = run(bin()
        .env("HYPERFLUX_SEED", "7")
        .args(["train", "--epochs", "1", "--config"])
        .arg(&cfg)
        .arg("--dataset")
        .arg(&data)
        .arg("--report-dir")
        .arg(ws.path("a")));
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let echo = json(&ws.path("a/config.json"));
    assert_eq!(echo["epochs"], 1);
    assert_eq!(echo["d"], 8);
    assert_eq!(echo["seed"], 7);

    // A seed in the file beats the environment.
    fs::write(&cfg, r#"{"epochs": 0, "d": 8, "seed": 2}"#).unwrap();
    let out = run(bin()
        .env("HYPERFLUX_SEED", "7")
        .args(["train", "--config"])
        .arg(&cfg)
        .arg("--dataset")
        .arg(&data)
        .arg("--report-dir")
        .arg(ws.path("b")));
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(json(&ws.path("b/config.json"))["seed"], 2);
}

#[test]
fn invalid_configs_exit_with_four() {
    let ws = Workspace::new();
    let data = ws.dataset();
    let cfg = ws.path("run.json");
    fs::write(&cfg, r#"{"epochs": 1, "learning_rate": 0.1}"#).unwrap();
    let out = run(bin().args(["train", "--config"]).arg(&cfg).arg("--dataset").arg(&data));
    assert_eq!(code(&out), 4);
    assert!(stderr(&out).contains("learning_rate"));

    let out = ws.train(&data, "r", &["--heads", "3"]);
    assert_eq!(code(&out), 4);

    let out = run(bin().env("HYPERFLUX_SEED", "x").args(["synth", "--output"]).arg(ws.path("s.jsonl")));
    assert_eq!(code(&out), 4);
}

#[test]
fn training_is_reproducible() {
    let ws = Workspace::new();
    let data = ws.dataset();
    assert_eq!(code(&ws.train(&data, "a", &[])), 0);
    assert_eq!(code(&ws.train(&data, "b", &[])), 0);
    for f in ["checkpoint.json", "loss_curve.csv"] {
        let a = fs::read(ws.path("a").join(f)).unwrap();
        let b = fs::read(ws.path("b").join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
}

#[test]
fn evaluation_reports_are_identical_and_embed_the_config() {
    let ws = Workspace::new();
    let data = ws.dataset();
    assert_eq!(code(&ws.train(&data, "r", &[])), 0);
    let ckpt = ws.path("r/checkpoint.json");
    let mut files = Vec::new();
    for _ in 0..2 {
        let out = run(bin()
            .args(["evaluate", "--checkpoint"])
            .arg(&ckpt)
            .arg("--dataset")
            .arg(&data)
            .arg("--report-dir")
            .arg(ws.path("e1")));
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        files.push((
            fs::read(ws.path("e1/metrics_test.json")).unwrap(),
            fs::read(ws.path("e1/metrics_test.csv")).unwrap(),
        ));
        fs::remove_dir_all(ws.path("e1")).unwrap();
    }
    assert!(files[0] == files[1]);
    let report: Value = serde_json::from_slice(&files[0].0).unwrap();
    assert_eq!(report["split"], "test");
    assert_eq!(report["config"]["negatives"], 5);
    let mrr = report["metrics"]["mrr"].as_f64().unwrap();
    assert!(mrr > 0.0 && mrr <= 1.0);
    let csv = String::from_utf8(files[0].1.clone()).unwrap();
    assert!(csv.starts_with("metric,bucket,value\n"));
    assert!(csv.contains("config,negatives,5\n"));

    for split in ["train", "validation"] {
        let out = run(bin()
            .args(["evaluate", "--split", split, "--checkpoint"])
            .arg(&ckpt)
            .arg("--dataset")
            .arg(&data)
            .arg("--report-dir")
            .arg(ws.path("e1")));
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        assert!(ws.path("e1").join(format!("metrics_{split}.json")).exists());
    }
}

#[test]
fn wrong_checkpoint_version_exits_with_three() {
    let ws = Workspace::new();
    let data = ws.dataset();
    assert_eq!(code(&ws.train(&data, "r", &["--epochs", "0"])), 0);
    let path = ws.path("r/checkpoint.json");
    let mut ckpt = json(&path);
    ckpt["version"] = Value::from("hyperflux-ckpt-0");
    fs::write(&path, ckpt.to_string()).unwrap();
    let out = run(bin().args(["evaluate", "--checkpoint"]).arg(&path).arg("--dataset").arg(&data));
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("version"));
}

#[test]
fn forecasts_parse_back() {
    let ws = Workspace::new();
    let data = ws.dataset();
    assert_eq!(code(&ws.train(&data, "r", &[])), 0);
    let ckpt = ws.path("r/checkpoint.json");
    for at_end in [false, true] {
        let mut cmd = bin();
        cmd.args(["forecast", "--checkpoint"]).arg(&ckpt).arg("--dataset").arg(&data);
        if at_end {
            cmd.arg("--at-end");
        }
        let out = run(&mut cmd);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let rows: Vec<NodeForecast> = String::from_utf8(out.stdout)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(rows.len(), 20);
        assert!(rows.iter().all(|r| r.delta_t > 0.0));
        let candidates: Vec<_> = rows.iter().filter_map(|r| r.candidate()).collect();
        assert!(!candidates.is_empty());
        assert!(candidates.into_iter().all(|c| c.is_ok()));
    }

    let out_path = ws.path("f/forecast.jsonl");
    let out = run(bin()
        .args(["forecast", "--at-end", "--checkpoint"])
        .arg(&ckpt)
        .arg("--dataset")
        .arg(&data)
        .arg("--output")
        .arg(&out_path));
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read_to_string(&out_path).unwrap().lines().count(), 20);
}

#[test]
fn mismatched_dataset_is_rejected() {
    let ws = Workspace::new();
    let data = ws.dataset();
    assert_eq!(code(&ws.train(&data, "r", &["--epochs", "0"])), 0);
    let other = ws.path("other.jsonl");
    let out = run(bin().args(["synth", "--node-count", "30", "--output"]).arg(&other));
    assert_eq!(code(&out), 0);
    let out = run(bin()
        .args(["forecast", "--checkpoint"])
        .arg(ws.path("r/checkpoint.json"))
        .arg("--dataset")
        .arg(&other));
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("nodes"));
}

#[test]
fn synth_config_file_is_validated() {
    let ws = Workspace::new();
    let cfg = ws.path("synth.json");
    let c = SynthConfig {
        node_count: 12,
        hyperedges: 50,
        ..Default::default()
    };
    fs::write(&cfg, serde_json::to_string(&c).unwrap()).unwrap();
    let out = run(bin().args(["synth", "--config"]).arg(&cfg).arg("--output").arg(ws.path("s.jsonl")));
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(fs::read_to_string(ws.path("s.jsonl")).unwrap().lines().count(), 50);

    fs::write(&cfg, r#"{"nodes": 12}"#).unwrap();
    let out = run(bin().args(["synth", "--config"]).arg(&cfg).arg("--output").arg(ws.path("t.jsonl")));
    assert_eq!(code(&out), 4);

    let out = run(bin().args(["synth", "--communities", "1", "--output"]).arg(ws.path("u.jsonl")));
    assert_eq!(code(&out), 4);
}

#[test]
fn diverging_training_exits_with_five() {
    let ws = Workspace::new();
    let data = ws.dataset();
    let out = ws.train(&data, "r", &["--lr", "1e300"]);
    assert_eq!(code(&out), 5);
    assert!(stderr(&out).contains("non-finite"));
}
