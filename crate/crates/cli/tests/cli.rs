use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn cgnsda(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cgnsda")).args(args).env("CGNSDA_THREADS", "1").output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

const DYAD: &str = r#"{
  "schema_version": 1,
  "experiment": "dyad",
  "dt": 0.005,
  "T": 2,
  "seed": 4,
  "da": { "online": { "policy": { "kind": "adaptive", "b": 100, "delta": 1e-6, "w": 3, "criterion": "lsdf" } } },
  "diagnostics": { "spectral-radii": true }
}"#;

fn run_into(cfg: &Path, out: &Path) -> Output {
    cgnsda(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

fn csv_files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    names.sort();
    names
}

fn strip_timings(v: &mut Value) {
    match v {
        Value::Object(map) => {
            map.remove("wall_time_s");
            map.values_mut().for_each(strip_timings);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timings),
        _ => {}
    }
}

#[test]
fn run_writes_artifacts_described_by_the_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "dyad.json", DYAD);
    let out = tmp.path().join("out");
    let res = run_into(&cfg, &out);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));

    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let files = summary["files"].as_object().unwrap();
    for name in ["trajectory.csv", "filter.csv", "online.csv", "lags.csv", "spectral.csv"] {
        assert!(files.contains_key(name), "{name} missing from summary");
    }
    assert!(out.join("hidden.svg").exists());
    for (name, columns) in files {
        let text = fs::read_to_string(out.join(name)).unwrap();
        let ncol = columns.as_array().unwrap().len();
        let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
        assert_eq!(header.len(), ncol, "{name}");
        assert!(text.lines().skip(1).all(|l| l.split(',').count() == ncol), "{name} has ragged rows");
    }
    assert_eq!(summary["online"]["peak_entries"], 101);
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "dyad.json", DYAD);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(run_into(&cfg, &a).status.code(), Some(0));
    assert_eq!(run_into(&cfg, &b).status.code(), Some(0));
    let names = csv_files(&a);
    assert_eq!(names, csv_files(&b));
    for n in &names {
        assert_eq!(fs::read(a.join(n)).unwrap(), fs::read(b.join(n)).unwrap(), "{n} differs");
    }
    let mut sa: Value = serde_json::from_slice(&fs::read(a.join("summary.json")).unwrap()).unwrap();
    let mut sb: Value = serde_json::from_slice(&fs::read(b.join("summary.json")).unwrap()).unwrap();
    strip_timings(&mut sa);
    strip_timings(&mut sb);
    assert_eq!(sa, sb);
}

#[test]
fn seed_flag_overrides_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "dyad.json", DYAD);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(run_into(&cfg, &a).status.code(), Some(0));
    let res = cgnsda(&["run", cfg.to_str().unwrap(), "--out", b.to_str().unwrap(), "--seed", "5"]);
    assert_eq!(res.status.code(), Some(0));
    assert_ne!(fs::read(a.join("trajectory.csv")).unwrap(), fs::read(b.join("trajectory.csv")).unwrap());
}

#[test]
fn config_and_io_errors_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing.json");
    assert_eq!(cgnsda(&["run", missing.to_str().unwrap()]).status.code(), Some(2));

    let bad_dt = write_config(tmp.path(), "dt.json", r#"{"schema_version": 1, "experiment": "dyad", "dt": 0, "T": 1}"#);
    let res = cgnsda(&["run", bad_dt.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("dt must be positive"));

    let unknown = write_config(
        tmp.path(),
        "unknown.json",
        r#"{"schema_version": 1, "experiment": "dyad", "dt": 0.01, "T": 1, "colour": "red"}"#,
    );
    assert_eq!(cgnsda(&["run", unknown.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(cgnsda(&["check", "nothing"]).status.code(), Some(2));
    assert_eq!(cgnsda(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_with_3() {
    // a unit prior against near-noiseless tracers drives the explicit
    // Riccati step indefinite on the first observation
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "lda.json",
        r#"{"schema_version": 1, "experiment": "lda", "params": {"k_max": 1, "n_tracers": 2},
            "dt": 0.005, "T": 0.1, "da": "filter", "init": {"prior_var": 1.0}}"#,
    );
    let res = run_into(&cfg, &tmp.path().join("out"));
    assert_eq!(res.status.code(), Some(3), "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn compare_reports_storage_growing_with_the_lag() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "dyad.json", DYAD);
    let out = tmp.path().join("cmp");
    let res = cgnsda(&[
        "compare",
        cfg.to_str().unwrap(),
        "--policies",
        "fixed:0,fixed:10,fixed:50,full",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let json: Value = serde_json::from_slice(&fs::read(out.join("compare.json")).unwrap()).unwrap();
    let rows = json["policies"].as_array().unwrap();
    let peaks: Vec<u64> = rows.iter().map(|r| r["peak_entries"].as_u64().unwrap()).collect();
    assert_eq!(peaks, vec![1, 11, 51, 401]);
    let bytes: Vec<u64> = rows.iter().map(|r| r["peak_bytes"].as_u64().unwrap()).collect();
    assert!(bytes.iter().zip(&peaks).all(|(b, p)| b * peaks[0] == bytes[0] * p));
    assert_eq!(fs::read_to_string(out.join("compare.csv")).unwrap().lines().count(), 5);

    let one = cgnsda(&["compare", cfg.to_str().unwrap(), "--policies", "fixed:3"]);
    assert_eq!(one.status.code(), Some(2));
}

#[test]
fn check_passes_and_flags_broken_tensor_updates() {
    let ok = cgnsda(&["check", "linear2d"]);
    let text = String::from_utf8_lossy(&ok.stdout);
    assert_eq!(ok.status.code(), Some(0), "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 3);

    let broken = cgnsda(&["check", "linear2d", "--fault", "skip-tensor-update"]);
    assert_eq!(broken.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&broken.stdout).contains("FAIL [11]"));
}
