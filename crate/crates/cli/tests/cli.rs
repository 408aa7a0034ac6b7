//! The `agentplant` binary end to end: files written, exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn agentplant(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_agentplant")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn run_writes_a_trace_that_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let o = agentplant(&["run", "--config", s(&scenario("exchanger_agent.toml")), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let trace = dir.path().join("trace.ndjson");
    let metrics = dir.path().join("metrics.json");
    let m = read_json(&metrics);
    assert_eq!(m["controller"], "agent");
    assert_eq!(m["latencies"][0]["latency_s"], 0.0);

    let o = agentplant(&["verify-trace", "--trace", s(&trace), "--metrics", s(&metrics)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn tampered_metrics_fail_verification() {
    let dir = tempfile::tempdir().unwrap();
    let o = agentplant(&["run", "--config", s(&scenario("exchanger_sfc.toml")), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let metrics = dir.path().join("metrics.json");
    let mut m = read_json(&metrics);
    m["latencies"][0]["latency_s"] = 0.0.into();
    std::fs::write(&metrics, m.to_string()).unwrap();
    let o = agentplant(&["verify-trace", "--trace", s(&dir.path().join("trace.ndjson")), "--metrics", s(&metrics)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn compare_mode_writes_one_trace_per_controller() {
    let dir = tempfile::tempdir().unwrap();
    let o = agentplant(&["run", "--config", s(&scenario("exchanger_hot_stop.toml")), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = read_json(&dir.path().join("metrics.json"));
    for c in ["agent", "sfc"] {
        assert!(dir.path().join(format!("trace-{c}.ndjson")).exists());
        assert_eq!(m[c]["controller"], c);
    }
    let o = agentplant(&[
        "diff-trace",
        s(&dir.path().join("trace-agent.ndjson")),
        s(&dir.path().join("trace-sfc.ndjson")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let d: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(d["identical"], false);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        let o = agentplant(&["run", "--config", s(&scenario("lifting_random.toml")), "--seed", "5", "--out", s(dir.path())]);
        assert!(o.status.code().is_some_and(|c| c <= 1), "{}", stderr(&o));
    }
    let (ta, tb) = (a.path().join("trace.ndjson"), b.path().join("trace.ndjson"));
    assert_eq!(std::fs::read(&ta).unwrap(), std::fs::read(&tb).unwrap());
    let o = agentplant(&["diff-trace", s(&ta), s(&tb)]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn lifting_run_passes_its_own_checks() {
    let dir = tempfile::tempdir().unwrap();
    let o = agentplant(&["run", "--config", s(&scenario("lifting_contest_once.toml")), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = read_json(&dir.path().join("metrics.json"));
    assert!(m["checks"].as_array().unwrap().iter().all(|c| c["passed"] == true));
    let o = agentplant(&[
        "verify-trace",
        "--trace",
        s(&dir.path().join("trace.ndjson")),
        "--metrics",
        s(&dir.path().join("metrics.json")),
    ]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn interactive_scenarios_are_sent_to_serve() {
    let dir = tempfile::tempdir().unwrap();
    let o = agentplant(&["run", "--config", s(&scenario("lifting_interactive.toml")), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("serve"));
}

#[test]
fn bad_configs_exit_with_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = agentplant(&["run", "--config", s(&dir.path().join("missing.toml"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing.toml"));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "mode = \"exchanger_agent\"\nduration = -5\n").unwrap();
    let o = agentplant(&["run", "--config", s(&bad), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("duration"), "{}", stderr(&o));
    assert!(!dir.path().join("trace.ndjson").exists());
}

#[test]
fn latency_bench_reports_both_controllers() {
    let dir = tempfile::tempdir().unwrap();
    let o = agentplant(&[
        "bench",
        "--config",
        s(&scenario("exchanger_agent.toml")),
        "--trials",
        "20",
        "--seed",
        "3",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let printed: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(printed["agent"]["stats"]["max"], 0.0);
    let full = read_json(&dir.path().join("bench.json"));
    assert_eq!(full["stop_times"].as_array().unwrap().len(), 20);
    let sfc = full["sfc"]["samples"].as_array().unwrap();
    assert!(sfc.iter().all(|x| (0.0..5.0).contains(&x.as_f64().unwrap())));
}

#[test]
fn safety_and_override_benches_run() {
    let o = agentplant(&[
        "bench",
        "--config",
        s(&scenario("exchanger_agent.toml")),
        "--experiment",
        "safety",
        "--trials",
        "5",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["not_worse"], 5);

    let o = agentplant(&[
        "bench",
        "--config",
        s(&scenario("exchanger_agent.toml")),
        "--experiment",
        "override",
        "--trials",
        "5",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["clean"], 5);
}

#[test]
fn bench_needs_an_exchanger() {
    let o = agentplant(&["bench", "--config", s(&scenario("lifting_all_accept.toml")), "--trials", "2"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn serve_refuses_a_busy_port() {
    let held = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = held.local_addr().unwrap().port().to_string();
    let o = agentplant(&["serve", "--config", s(&scenario("lifting_interactive.toml")), "--port", &port]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cannot listen"), "{}", stderr(&o));
}

#[test]
fn serve_needs_a_lifting_scenario() {
    let o = agentplant(&["serve", "--config", s(&scenario("exchanger_agent.toml")), "--port", "0"]);
    assert_eq!(o.status.code(), Some(2));
}
