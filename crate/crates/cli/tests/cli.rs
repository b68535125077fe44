use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use atlas_cli::config::RunConfig;
use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_atlas-lab");

const PROP1: &str = r#"
experiments = ["verify_prop1"]

[model]
kind = "atlas"
n = 3
g = 0.1
sigma = 0.2

[grid]
T = 1.0
M = 4096

[monte_carlo]
paths = 100
master_seed = 42
"#;

const MIXED: &str = r#"
experiments = ["simulate", "verify_lemma2", "verify_lemma3", "verify_lemma4", "verify_prop3", "coincidence", "convergence"]

[model]
kind = "atlas"
n = 3
g = 0.1
sigma = 0.2
initial_log = [0.1, 0.0, -0.1]

[grid]
horizon = 1.0
steps = 128

[monte_carlo]
paths = 6
master_seed = 7

[portfolio]
generator = "diversity"
p = 0.5

[convergence]
claim = "lemma4_max"
levels = [32, 64, 128]
"#;

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path
}

fn atlas_lab(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn run_to(config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = atlas_lab(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    o
}

fn contents(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn prop1_artifacts_exist_and_parse() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), PROP1);
    let out = tmp.path().join("out");
    run_to(&cfg, &out, &[]);
    let mut reader = csv::Reader::from_path(out.join("prop1_residuals.csv")).unwrap();
    assert_eq!(
        reader.headers().unwrap().iter().collect::<Vec<_>>(),
        ["path_id", "claim", "sup_residual", "endpoint_residual"]
    );
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 300);
    assert_eq!(&rows[0][1], "prop1_k1");
    assert!(rows.iter().all(|r| r[2].parse::<f64>().unwrap() >= 0.0));
    let summary: Value = serde_json::from_slice(&fs::read(out.join("prop1_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["experiment"], "verify_prop1");
    assert_eq!(summary["levels"][0], 4096);
    assert!(summary["max_sum_consistency_error"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn reruns_and_thread_counts_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), MIXED);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    run_to(&cfg, &a, &["--threads", "1"]);
    run_to(&cfg, &b, &["--threads", "1"]);
    run_to(&cfg, &c, &["--threads", "4"]);
    let first = contents(&a);
    assert_eq!(first.len(), 16);
    assert_eq!(first, contents(&b));
    assert_eq!(first, contents(&c));
}

#[test]
fn experiment_order_does_not_change_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let forward = write_config(tmp.path(), MIXED);
    run_to(&forward, &tmp.path().join("f"), &[]);
    let reversed_list = r#"experiments = ["convergence", "coincidence", "verify_prop3", "verify_lemma4", "verify_lemma3", "verify_lemma2", "simulate", "simulate"]"#;
    let text = MIXED.lines().map(|l| if l.starts_with("experiments") { reversed_list } else { l }).collect::<Vec<_>>().join("\n");
    let dir = tmp.path().join("rev");
    fs::create_dir(&dir).unwrap();
    let reversed = write_config(&dir, &text);
    run_to(&reversed, &tmp.path().join("r"), &[]);
    assert_eq!(contents(&tmp.path().join("f")), contents(&tmp.path().join("r")));
}

#[test]
fn config_echo_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), MIXED);
    let first = tmp.path().join("first");
    run_to(&cfg, &first, &[]);
    let summary: Value = serde_json::from_slice(&fs::read(first.join("lemma3_summary.json")).unwrap()).unwrap();
    let echo: RunConfig = serde_json::from_value(summary["config"].clone()).unwrap();
    let dir = tmp.path().join("echo");
    fs::create_dir(&dir).unwrap();
    let again = write_config(&dir, &toml::to_string(&echo).unwrap());
    let second = tmp.path().join("second");
    run_to(&again, &second, &[]);
    assert_eq!(contents(&first), contents(&second));
}

#[test]
fn lemma2_summary_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), MIXED);
    let out = tmp.path().join("out");
    run_to(&cfg, &out, &[]);
    let s: Value = serde_json::from_slice(&fs::read(out.join("lemma2_summary.json")).unwrap()).unwrap();
    for key in ["claim", "levels", "mean_residual", "max_residual", "fitted_rate", "config", "experiment"] {
        assert!(s.get(key).is_some(), "missing {key}");
    }
    assert!(s["fitted_rate"].is_null());
    assert_eq!(s["claim"], "lemma2");
    let c: Value = serde_json::from_slice(&fs::read(out.join("convergence_summary.json")).unwrap()).unwrap();
    assert_eq!(c["levels"].as_array().unwrap().len(), 3);
    assert!(c["fitted_rate"].is_number());
}

#[test]
fn zero_steps_fails_validation_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &PROP1.replace("M = 4096", "M = 0"));
    let out = tmp.path().join("out");
    let o = atlas_lab(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 12: grid.steps"));
    assert!(!out.exists());
    let v = atlas_lab(&["validate", cfg.to_str().unwrap()]);
    assert_eq!(v.status.code(), Some(2));
}

#[test]
fn validate_and_version_verbs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), PROP1);
    let o = atlas_lab(&["validate", cfg.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "ok: verify_prop1");
    let v = atlas_lab(&["version"]);
    assert!(String::from_utf8_lossy(&v.stdout).starts_with("atlas-lab "));
}

#[test]
fn numeric_failure_exits_three_with_location() {
    let tmp = tempfile::tempdir().unwrap();
    let text = r#"
experiments = ["verify_prop3"]
[model]
kind = "atlas"
n = 2
g = 0.1
sigma = 0.2
initial_log = [0.0, -40.0]
[grid]
horizon = 1.0
steps = 16
[monte_carlo]
paths = 2
master_seed = 1
[portfolio]
generator = "geometric_mean"
"#;
    let cfg = write_config(tmp.path(), text);
    let out = tmp.path().join("out");
    let o = atlas_lab(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("verify_prop3") && err.contains("path 0") && err.contains("time index 0"), "{err}");
}

#[test]
fn unwritable_output_exits_four() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &PROP1.replace("M = 4096", "M = 16").replace("paths = 100", "paths = 2"));
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let o = atlas_lab(&["run", cfg.to_str().unwrap(), "--out", blocker.join("sub").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
    let missing = atlas_lab(&["run", tmp.path().join("nope.toml").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(4));
}

#[test]
fn remark_probe_reports_triple_points() {
    let tmp = tempfile::tempdir().unwrap();
    let text = r#"
experiments = ["remark_probe"]
[model]
kind = "rank_based"
drifts = [-0.1, 0.0, 0.1]
sigmas = [0.3, 0.2, 0.1]
[grid]
horizon = 1.0
steps = 256
[monte_carlo]
paths = 5
master_seed = 3
"#;
    let cfg = write_config(tmp.path(), text);
    let out = tmp.path().join("out");
    run_to(&cfg, &out, &[]);
    let s: Value = serde_json::from_slice(&fs::read(out.join("remark_probe_summary.json")).unwrap()).unwrap();
    assert!(s["triple_points"].is_u64());
    assert_eq!(s["components"].as_array().unwrap().len(), 3);
    assert_eq!(s["pairs"].as_array().unwrap().len(), 3);
}
