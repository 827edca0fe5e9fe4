use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn enerstat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_enerstat"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = enerstat(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn same_seed_same_log() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let men = scenario("men.scenario");
    for out in [&a, &b] {
        ok(&["run", s(&men), "--seed", "7", "--steps", "3000", "--out", s(out)]);
    }
    let log = |d: &Path| fs::read(d.join("events.jsonl")).unwrap();
    assert_eq!(log(&a), log(&b));
    let manifest = fs::read_to_string(a.join("bundle.json")).unwrap();
    assert!(manifest.contains("\"seed\": 7"));
}

#[test]
fn perturb_injects_at_the_step() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("base");
    ok(&["run", s(&scenario("men.scenario")), "--steps", "300", "--out", s(&base)]);
    let out = dir.path().join("kicked");
    ok(&[
        "perturb",
        s(&base),
        "--at",
        "100",
        "--prop",
        "loop3.energy",
        "--delta",
        "-40",
        "--out",
        s(&out),
    ]);
    let log = fs::read_to_string(out.join("events.jsonl")).unwrap();
    let hits: Vec<&str> = log
        .lines()
        .filter(|l| l.contains("\"kind\":\"perturbation\"") && l.contains("\"delta\":-40"))
        .collect();
    assert_eq!(hits.len(), 1);
    assert!(hits[0].starts_with("{\"v\":1,\"step\":100,"), "{}", hits[0]);
}

#[test]
fn validate_reports_bad_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.scenario");
    fs::write(
        &bad,
        r#"{ "schema": "enerstat.scenario/1", "name": "bad", "steps": 5 }"#,
    )
    .unwrap();
    let out = enerstat(&["validate", s(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.scenario") && err.contains("seed"), "{err}");

    let good = ok(&["validate", s(&scenario("neuron.scenario"))]);
    assert!(good.contains("soma"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(enerstat(&[]).status.code(), Some(2));
    assert_eq!(enerstat(&["run"]).status.code(), Some(2));
    assert_eq!(enerstat(&["perturb", "x", "--at", "soon"]).status.code(), Some(2));
    assert_eq!(enerstat(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn missing_bundle_is_a_domain_error() {
    let out = enerstat(&["metrics", "/nonexistent/bundle"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn metrics_recomputes_series() {
    let dir = tempfile::tempdir().unwrap();
    let b = dir.path().join("b");
    ok(&["run", s(&scenario("recovery.scenario")), "--out", s(&b)]);
    let csv = ok(&["metrics", s(&b), "--window", "500"]);
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("window,start,end,discoveries,productions,kinds,k_d,k_p,k_d_value,k_p_value")
    );
    assert_eq!(lines.count(), 4);
    // Same window as the run: identical to the bundled file.
    let same = ok(&["metrics", s(&b)]);
    assert_eq!(same, fs::read_to_string(b.join("metrics.csv")).unwrap());
}

#[test]
fn tcv_prints_a_report() {
    let out = ok(&[
        "tcv",
        s(&scenario("thermostat.scenario")),
        "--variable",
        "env.temp",
        "--trials",
        "2",
    ]);
    let report: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(report["verdict"], "controlled");
    assert_eq!(report["trials"], 2);
    let bad = enerstat(&[
        "tcv",
        s(&scenario("thermostat.scenario")),
        "--variable",
        "env.temp",
        "--theta",
        "0.9",
    ]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn seed_sweep_writes_per_seed_bundles() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&[
        "run",
        s(&scenario("minimal-loop.scenario")),
        "--seeds",
        "1..4",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(out.lines().count(), 3);
    for seed in 1..4 {
        assert!(dir.path().join(format!("seed-{seed}/bundle.json")).exists());
    }
}
