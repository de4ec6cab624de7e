use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

/// sha256 of the trace generated from configs/minimal.toml.
const MINIMAL_TRACE_SHA256: &str = "c916dd7babff7e8e0c7efd831b0324eafa04557474f129caed094206df6fbdb3";

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn moebal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_moebal")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate(dir: &Path, cfg: &str) -> PathBuf {
    let out = dir.join("trace.jsonl");
    let o = moebal(&["generate", s(&config(cfg)), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn generate_matches_golden_digest_and_reports_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t.jsonl");
    let o = moebal(&["generate", s(&config("minimal.toml")), "--out", s(&out)]);
    assert!(o.status.success());
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("devices=4 experts=4 iterations=100"), "{stdout}");
    let bytes = fs::read(&out).unwrap();
    assert_eq!(bytes.iter().filter(|&&b| b == b'\n').count(), 100);
    let digest: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
    assert_eq!(digest, MINIMAL_TRACE_SHA256);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    assert!(moebal(&["generate", s(&config("minimal.toml")), "--out", s(&a)]).status.success());
    assert!(moebal(&["generate", s(&config("minimal.toml")), "--out", s(&b), "--seed", "8"]).status.success());
    assert_ne!(fs::read(a).unwrap(), fs::read(b).unwrap());
}

#[test]
fn invalid_drift_exits_2_naming_field() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(config("minimal.toml")).unwrap().replace("drift = 0.05", "drift = 1.5");
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, text).unwrap();
    let o = moebal(&["generate", s(&cfg), "--out", s(&dir.path().join("t.jsonl"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("generator.drift"));
}

#[test]
fn unknown_config_key_and_schema_version_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let base = fs::read_to_string(config("minimal.toml")).unwrap();
    for (bad, needle) in [
        (base.replace("seed = 7", "seed = 7\nsped = 3"), "sped"),
        (base.replace("schema_version = 1", "schema_version = 9"), "schema_version"),
    ] {
        let cfg = dir.path().join("bad.toml");
        fs::write(&cfg, bad).unwrap();
        let o = moebal(&["generate", s(&cfg), "--out", s(&dir.path().join("t.jsonl"))]);
        assert_eq!(o.status.code(), Some(2));
        assert!(String::from_utf8_lossy(&o.stderr).contains(needle));
    }
}

#[test]
fn simulate_writes_parseable_reports_and_gantt() {
    let dir = tempfile::tempdir().unwrap();
    let trace = generate(dir.path(), "minimal.toml");
    let out = dir.path().join("sim");
    let cfg = config("minimal.toml");
    let o = moebal(&[
        "simulate",
        "--trace",
        s(&trace),
        "--cluster",
        s(&cfg),
        "--model",
        s(&cfg),
        "--policy",
        "prophet-sched",
        "--gantt",
        "0,3",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["policy"], "prophet-sched");
    assert_eq!(report["iterations"].as_array().unwrap().len(), 100);
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 101);
    for j in [0, 3] {
        let svg = fs::read_to_string(out.join(format!("timeline_iter{j}.svg"))).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("compute") && svg.contains("network"));
        let tl: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join(format!("timeline_iter{j}.json"))).unwrap()).unwrap();
        assert_eq!(tl["iteration"], j);
    }
    assert!(!out.join("timeline_iter1.svg").exists());
}

#[test]
fn simulate_flag_overrides_reach_the_planner() {
    let dir = tempfile::tempdir().unwrap();
    let trace = generate(dir.path(), "minimal.toml");
    let cfg = config("minimal.toml");
    let o = moebal(&[
        "simulate",
        "--trace",
        s(&trace),
        "--config",
        s(&cfg),
        "--policy",
        "prophet",
        "--n",
        "4",
        "--out",
        s(&dir.path().join("x")),
    ]);
    // n must stay below the device count.
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("planner.n"));
}

#[test]
fn simulate_errors_use_documented_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let trace = generate(dir.path(), "minimal.toml");
    let cfg = config("minimal.toml");
    let out = dir.path().join("x");
    let o = moebal(&["simulate", "--trace", s(&trace), "--config", s(&cfg), "--policy", "fastermoe", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    for name in ["vanilla", "top<m>", "prophet", "prophet-sched"] {
        assert!(err.contains(name), "{err}");
    }
    let missing = dir.path().join("missing.jsonl");
    let o = moebal(&["simulate", "--trace", s(&missing), "--config", s(&cfg), "--policy", "vanilla", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    // Trace from a different cluster size.
    let other = dir.path().join("other");
    fs::create_dir(&other).unwrap();
    let big = generate(&other, "skewed8.toml");
    let o = moebal(&["simulate", "--trace", s(&big), "--config", s(&cfg), "--policy", "vanilla", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let o = moebal(&["simulate", "--trace", s(&trace), "--policy", "vanilla", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn compare_tables_policies() {
    let dir = tempfile::tempdir().unwrap();
    let trace = generate(dir.path(), "minimal.toml");
    let cfg = config("minimal.toml");
    let out = dir.path().join("cmp");
    let o = moebal(&[
        "compare",
        "--trace",
        s(&trace),
        "--config",
        s(&cfg),
        "--policy",
        "vanilla,top2",
        "--policy",
        "prophet-sched",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("compare.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[1].starts_with("vanilla,") && rows[3].starts_with("prophet-sched,"));
    assert_eq!(rows[1].split(',').nth(2), Some("1"));
    let txt = fs::read_to_string(out.join("compare.txt")).unwrap();
    assert_eq!(String::from_utf8(o.stdout).unwrap(), txt);
}
