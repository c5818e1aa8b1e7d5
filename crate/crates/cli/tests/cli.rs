use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use byzsgd::experiment::ExperimentConfig;
use byzsgd::optim::CostSpec;

fn byzsgd(args: &[&str]) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_byzsgd"));
    c.args(args).env_remove("BYZSGD_OUT_DIR");
    c
}

fn run(args: &[&str]) -> Output {
    byzsgd(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, cfg: &ExperimentConfig) -> String {
    let path = dir.join(format!("{}.json", cfg.name));
    fs::write(&path, cfg.to_json()).unwrap();
    path.to_string_lossy().into_owned()
}

fn bowl_config(name: &str, gamma: f64) -> ExperimentConfig {
    let cost = CostSpec::QuadraticBowl {
        dim: 3,
        curvature: 1.0,
        center: None,
    };
    let mut c = ExperimentConfig::honest(name, 6, 1, cost, gamma);
    c.epochs = 80;
    c.replicates = 3;
    c
}

#[test]
fn validate_echoes_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &bowl_config("ok", 0.1));
    let o = run(&["validate", &path]);
    assert!(o.status.success(), "{}", stderr(&o));
    let echoed = ExperimentConfig::from_json(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(echoed.max_deliveries, Some(echoed.delivery_cap()));
}

#[test]
fn invalid_config_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::honest("strict", 10, 3, CostSpec::LogisticRegression, 0.1);
    let path = write_config(dir.path(), &cfg);
    let o = run(&["validate", &path]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("n must exceed 3f+1"), "{}", stderr(&o));

    let o = run(&["preset", "no-such-suite"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_file_exits_3() {
    let o = run(&["run", "/nonexistent/config.json"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("/nonexistent/config.json"));
}

#[test]
fn numeric_fault_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = bowl_config("overflow", 1e300);
    cfg.filter.enabled = false;
    cfg.replicates = 1;
    let path = write_config(dir.path(), &cfg);
    let out = dir.path().join("out");
    let o = run(&["run", &path, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(out.join("summary.json").exists());
}

#[test]
fn env_var_sets_output_dir_and_flag_wins() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &bowl_config("env", 0.1));
    let from_env = dir.path().join("from-env");
    let o = byzsgd(&["run", &path, "--replicates", "1"]).env("BYZSGD_OUT_DIR", &from_env).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(from_env.join("summary.json").exists());
    assert!(from_env.join("replicate-0.csv").exists());
    assert!(!from_env.join("replicate-1.csv").exists());

    let from_flag = dir.path().join("from-flag");
    let o = byzsgd(&["run", &path, "--out", from_flag.to_str().unwrap()])
        .env("BYZSGD_OUT_DIR", dir.path().join("ignored"))
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(from_flag.join("replicate-2.csv").exists());
    assert!(!dir.path().join("ignored").exists());
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), &bowl_config("det", 0.1));
    let mut outputs = Vec::new();
    for (tag, parallel) in [("a", "1"), ("b", "8"), ("c", "3")] {
        let out = dir.path().join(tag);
        let o = run(&["run", &path, "--out", out.to_str().unwrap(), "--parallel", parallel]);
        assert!(o.status.success(), "{}", stderr(&o));
        outputs.push(dir_bytes(&out));
    }
    assert_eq!(outputs[0].len(), 4);
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

#[test]
fn plot_data_from_two_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut summaries = Vec::new();
    for (name, gamma, epochs) in [("slow", 0.05, 40), ("fast", 0.2, 60)] {
        let mut cfg = bowl_config(name, gamma);
        cfg.epochs = epochs;
        let path = write_config(dir.path(), &cfg);
        let out = dir.path().join(name);
        assert!(run(&["run", &path, "--out", out.to_str().unwrap()]).status.success());
        summaries.push(out.join("summary.json").to_string_lossy().into_owned());
    }
    let plot = dir.path().join("plot.csv");
    let o = run(&["plot-data", &summaries[0], &summaries[1], "--metric", "grad_norm", "--out", plot.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("warning: fast: truncated from 60 to 40 epochs"), "{}", stderr(&o));
    let text = fs::read_to_string(&plot).unwrap();
    assert_eq!(text.lines().count(), 1 + 80);
    assert!(text.starts_with("series,metric,epoch,value,replicates,diverged\nslow,grad_norm,1,"));

    let o = run(&["plot-data", &summaries[0], "--metric", "accuracy", "--out", plot.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "clap usage errors exit 2");
}

#[test]
fn preset_lists_and_writes_suites() {
    let o = run(&["preset"]);
    assert!(o.status.success());
    let listed = String::from_utf8(o.stdout).unwrap();
    assert!(listed.lines().any(|l| l == "attack-negate10"));

    let dir = tempfile::tempdir().unwrap();
    let o = run(&["preset", "attack-flood", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    let written = dir_bytes(dir.path());
    let names: Vec<&str> = written.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["attack-flood-nofreq.json", "attack-flood.json"]);
    let shipped = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets/attack-flood.json");
    assert_eq!(written[1].1, fs::read(shipped).unwrap());
}
