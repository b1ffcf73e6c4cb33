use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mgce::harness::RunConfig;
use serde_json::Value;

fn mgce(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mgce"))
        .args(args)
        .env_remove("MGCE_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn synth(dir: &Path) -> String {
    let data = dir.join("data");
    let out = mgce(&["synth", "--k", "3", "--d", "4", "--n", "300", "--n-test", "150", "--seed", "7", "--out", data.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    data.to_str().unwrap().to_string()
}

fn train(data: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--data", data, "--out", out.to_str().unwrap(), "--deterministic"];
    for (flag, value) in [("--model", "linear"), ("--epochs", "3"), ("--lr", "0.05")] {
        if !extra.contains(&flag) {
            args.extend([flag, value]);
        }
    }
    args.extend_from_slice(extra);
    mgce(&args)
}

#[test]
fn deterministic_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    for run in ["a", "b"] {
        let out = train(&data, &dir.path().join(run), &["--model", "mlp", "--hidden", "8"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for file in ["run.jsonl", "best.ckpt", "preprocess.json"] {
        let a = fs::read(dir.path().join("a").join(file)).unwrap();
        let b = fs::read(dir.path().join("b").join(file)).unwrap();
        assert!(a == b, "{file} differs");
    }
    // summaries differ only in the output directory they echo
    let summary = |run: &str| {
        let mut v: Value = serde_json::from_str(&fs::read_to_string(dir.path().join(run).join("summary.json")).unwrap()).unwrap();
        v["config"]["out"] = Value::Null;
        v
    };
    assert_eq!(summary("a"), summary("b"));
    let lines = fs::read_to_string(dir.path().join("a/run.jsonl")).unwrap();
    let epochs: Vec<u64> = lines
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["epoch"].as_u64().unwrap())
        .collect();
    assert_eq!(epochs, vec![1, 2, 3]);
}

#[test]
fn summary_echoes_every_config_value() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let out = train(&data, &dir.path().join("run"), &[]);
    assert!(out.status.success());
    let summary: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("run/summary.json")).unwrap()).unwrap();
    let config = summary["config"].as_object().unwrap();
    let defaults = serde_json::to_value(RunConfig::default()).unwrap();
    for key in defaults.as_object().unwrap().keys() {
        assert!(config.contains_key(key), "missing {key}");
    }
    assert_eq!(config["epochs"], 3);
    assert_eq!(config["momentum"], 0.9);
    assert_eq!(config["loss"], "mgce");
    assert_eq!(summary["k"], 3);
    assert_eq!(summary["d"], 4);
    assert_eq!(serde_json::from_str::<Value>(&stdout(&out)).unwrap(), summary);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# shared settings\nepochs = 4\nbeta = 2.5\nlambda0 = 0.001\n").unwrap();
    let out = train(&data, &dir.path().join("run"), &["--config", cfg.to_str().unwrap(), "--epochs", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(summary["config"]["epochs"], 2);
    assert_eq!(summary["config"]["beta"], 2.5);
    assert_eq!(summary["config"]["lambda0"], 0.001);
}

#[test]
fn eval_reproduces_the_best_epoch_test_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let run = dir.path().join("run");
    let out = train(&data, &run, &[]);
    let summary: Value = serde_json::from_str(&stdout(&out)).unwrap();
    let out = mgce(&[
        "eval",
        "--checkpoint",
        run.join("best.ckpt").to_str().unwrap(),
        "--data",
        &format!("{data}/test.csv"),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["accuracy"], summary["best"]["test_accuracy"]);
    assert_eq!(report["sce"], summary["best"]["sce"]);
    assert_eq!(report["n"], 150);
}

#[test]
fn sweep_writes_one_row_per_grid_value() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    let out_dir = dir.path().join("sweep");
    let out = mgce(&[
        "sweep-beta",
        "--data",
        &data,
        "--model",
        "linear",
        "--epochs",
        "2",
        "--lr",
        "0.05",
        "--deterministic",
        "--grid",
        "1.2,2,5",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let sweep: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("sweep.json")).unwrap()).unwrap();
    let rows = sweep["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 3);
    let best = rows.iter().map(|r| r["val_accuracy"].as_f64().unwrap()).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(sweep["selected"]["val_accuracy"].as_f64().unwrap(), best);
    for beta in ["1.2", "2", "5"] {
        assert!(out_dir.join(format!("beta-{beta}/best.ckpt")).exists());
    }
    assert_eq!(stdout(&out).matches('*').count(), 1);
}

#[test]
fn phi_reports_the_solution() {
    let out = mgce(&["phi", "--beta", "2", "--margins", "0.2,-0.2", "--json"]);
    assert!(out.status.success());
    let report: Value = serde_json::from_str(&stdout(&out)).unwrap();
    let h: Vec<f64> = report["h"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!((h[0] + h[1] - 1.0).abs() < 1e-12 && h[0] > h[1]);
    assert!(report["iterations"].as_u64().unwrap() <= report["iteration_bound"].as_u64().unwrap());
    let text = stdout(&mgce(&["phi", "--beta", "1e6", "--margins", "0,0"]));
    assert!(text.contains("phi"));
}

#[test]
fn gradcheck_and_bench_run() {
    let out = mgce(&["gradcheck", "--beta", "2", "--k", "5", "--d", "8", "--trials", "100"]);
    assert!(out.status.success());
    assert!(stdout(&out).trim_end().ends_with("PASS"));
    let out = mgce(&["bench-bisection", "--betas", "1.4,1e6", "--ks", "2,10", "--batch", "20", "--repeats", "2"]);
    assert!(out.status.success());
    assert_eq!(stdout(&out).lines().count(), 1 + 4);
}

#[test]
fn exit_codes_follow_the_error_kind() {
    assert_eq!(mgce(&["train", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(mgce(&["phi", "--beta", "2", "--margins", "0.1,abc"]).status.code(), Some(1));
    assert_eq!(mgce(&["train", "--data", "/nonexistent/place", "--epochs", "1"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path());
    assert_eq!(train(&data, &dir.path().join("r"), &["--beta", "0.5"]).status.code(), Some(1));
    assert_eq!(train(&data, &dir.path().join("r"), &["--loss", "hinge"]).status.code(), Some(1));
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "x1,label\n0.5,a\nnot-a-number,b\n").unwrap();
    let ckpt_dir = dir.path().join("ok");
    assert!(train(&data, &ckpt_dir, &[]).status.success());
    let out = mgce(&["eval", "--checkpoint", ckpt_dir.join("best.ckpt").to_str().unwrap(), "--data", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}
