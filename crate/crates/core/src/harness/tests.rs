use std::path::{Path, PathBuf};

use serde_json::json;

use super::*;
use crate::lifting::Outcome;
use crate::plant::Injection;
use crate::trace::{parse_ndjson, TraceWriter};

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn stop_setup(at: f64) -> ExchangerSetup {
    let mut s = ExchangerSetup::shipped();
    s.injections = vec![Injection::CompressorStop { at }];
    s
}

/// Next polling boundary at or after the stopped percept, minus the percept time.
fn polled_latency(stop_at: f64, rundown: f64, poll: f64, dt: f64) -> f64 {
    let percept_tick = ((stop_at + rundown) / dt).round();
    let poll_ticks = (poll / dt).round();
    ((percept_tick / poll_ticks).ceil() * poll_ticks - percept_tick) * dt
}

#[test]
fn stop_latency_per_controller() {
    let c = compare(&stop_setup(1.2), 1);
    let a = &c.agent.metrics.latencies[0];
    assert_eq!(a.stimulus, "+compressor_stopped");
    assert_eq!(a.stimulus_tick, 112);
    assert_eq!(a.latency_s, Some(0.0));
    let s = &c.sfc.metrics.latencies[0];
    assert_eq!(s.response_tick, Some(150));
    let want = polled_latency(1.2, 10.0, 5.0, 0.1);
    assert!((s.latency_s.unwrap() - want).abs() < 1e-9, "{:?} vs {want}", s.latency_s);
    assert!((want - 3.8).abs() < 1e-9);
    assert!(c.passed(), "{:?}", c.checks);
}

#[test]
fn stop_transient_settles_in_band() {
    for ctl in [Controller::Agent, Controller::Sfc] {
        let r = run_exchanger(&stop_setup(1.2), ctl, 1);
        let t = r.metrics.settling_time_s.expect("settles");
        assert!(t <= 300.0, "{ctl:?} took {t} s");
        // every sample after the settling instant is in band
        let from = 1.2 + t;
        for rec in r.trace.records().iter().filter(|r| r.kind == "sample" && r.clock >= from - 1e-9) {
            let temp = rec.payload["T"].as_f64().unwrap();
            assert!((temp - 45.0).abs() <= SETTLE_BAND, "{ctl:?} at {}: {temp}", rec.clock);
        }
        assert_eq!(r.metrics.time_above_abnormal_s, 0.0);
    }
}

#[test]
fn metrics_from_hand_built_trace() {
    let mut w = TraceWriter::new(0.5);
    w.push(
        0,
        "harness",
        "scenario",
        None,
        json!({"controller": "sfc", "tick_dt": 0.5, "t_abnormal": 60.0, "t_setpoint": 45.0, "injections": [{"kind": "compressor_stop", "at": 1.0}]}),
    );
    let temps = [45.0, 59.0, 60.0, 61.0, 47.0, 45.5, 44.8, 45.2];
    for (k, t) in temps.iter().enumerate() {
        let k = k as u64;
        w.push(k, "plant", "sample", None, json!({"T": t, "u": 0.5}));
        if k == 2 {
            w.push(k, "plant", "percept", None, json!({"change": "+abnormal_temperature"}));
        }
        if k == 5 {
            w.push(k, "sfc", "action", None, json!({"action": "emergency_cooling"}));
        }
    }
    let m = compute_metrics(w.records()).unwrap();
    // ticks 2 and 3 are at or above 60
    assert_eq!(m.time_above_abnormal_s, 1.0);
    assert_eq!(m.max_temperature, 61.0);
    assert_eq!(m.final_temperature, 45.2);
    // last out-of-band sample is tick 4 (47.0), so the band holds from tick 5 = 2.5 s
    assert_eq!(m.settling_time_s, Some(1.5));
    assert_eq!(m.latencies.len(), 1);
    assert_eq!(m.latencies[0].latency_s, Some(1.5));
    assert!(m.passed());
}

#[test]
fn unsettled_run_has_no_settling_time() {
    let mut w = TraceWriter::new(1.0);
    w.push(0, "harness", "scenario", None, json!({"controller": "agent", "tick_dt": 1.0, "t_abnormal": 60.0, "t_setpoint": 45.0}));
    w.push(0, "plant", "sample", None, json!({"T": 45.0, "u": 0.5}));
    w.push(1, "plant", "sample", None, json!({"T": 50.0, "u": 0.5}));
    assert_eq!(compute_metrics(w.records()).unwrap().settling_time_s, None);
    assert_eq!(compute_metrics(&[]), Err(MetricsError::NoScenario));
}

#[test]
fn stats_degenerate_and_known() {
    let s = Stats::of(&[2.0]).unwrap();
    assert_eq!((s.n, s.min, s.mean, s.max, s.stddev), (1, 2.0, 2.0, 2.0, 0.0));
    let s = Stats::of(&[1.0, 3.0]).unwrap();
    assert_eq!((s.mean, s.stddev), (2.0, 1.0));
    assert!(Stats::of(&[]).is_none());
}

#[test]
fn bench_single_trial() {
    let r = bench_latency(&ExchangerSetup::shipped(), 1, 9).unwrap();
    assert_eq!(r.agent.samples.len(), 1);
    assert_eq!(r.sfc.samples.len(), 1);
    assert_eq!(r.sfc.stats.stddev, 0.0);
    assert!(matches!(bench_latency(&ExchangerSetup::shipped(), 0, 9), Err(BenchError::NoTrials)));
}

#[test]
fn bench_samples_match_boundary_arithmetic() {
    let setup = ExchangerSetup::shipped();
    let r = bench_latency(&setup, 40, 3).unwrap();
    assert!(r.passed(), "{:?}", r.checks);
    for (t, l) in r.stop_times.iter().zip(&r.sfc.samples) {
        assert!(*t >= BENCH_BASE_S && *t < BENCH_BASE_S + 5.0);
        let want = polled_latency(*t, 10.0, 5.0, 0.1);
        assert!((l - want).abs() < 1e-9, "stop {t}: {l} vs {want}");
    }
    assert!(r.agent.samples.iter().all(|l| *l == 0.0));
    // same seed, same draw
    assert_eq!(draw_stop_times(&setup, 40, 3), r.stop_times);
}

#[test]
fn hot_stop_agent_never_longer_above() {
    let r = safety_comparison(&ExchangerSetup::shipped(), 12, 5);
    assert_eq!(r.cases.len(), 12);
    assert_eq!(r.not_worse, 12, "{:?}", r.cases);
    for c in &r.cases {
        assert!((57.0..59.5).contains(&c.initial_temperature));
        assert!(c.sfc_above_s > 0.0, "the hot transient must cross T_abnormal: {c:?}");
    }
}

#[test]
fn spike_during_takeover_is_protected() {
    let cases = override_check(&ExchangerSetup::shipped(), 0..16);
    for c in &cases {
        assert!(c.interrupted, "{c:?}");
        assert!(c.completed, "{c:?}");
        assert_eq!(c.unprotected_steps, 0, "{c:?}");
    }
}

#[test]
fn override_window_counts_unprotected_steps() {
    let mut w = TraceWriter::new(0.1);
    w.push(0, "agent", "event", None, json!({"event": "+abnormal_temperature"}));
    w.push(0, "agent", "plan-selected", None, json!({"intention": 4}));
    w.push(0, "agent", "step", None, json!({"intention": 4, "protected": true}));
    w.push(1, "agent", "step", None, json!({"intention": 2, "protected": false}));
    w.push(2, "agent", "intention-done", None, json!({"intention": 4}));
    w.push(3, "agent", "step", None, json!({"intention": 2, "protected": false}));
    assert_eq!(override_window(w.records()), (1, true));
    assert_eq!(override_window(&[]), (0, false));
}

#[test]
fn runs_are_byte_identical() {
    let s = stop_setup(1.2);
    let a = run_exchanger(&s, Controller::Agent, 4).trace.to_ndjson();
    let b = run_exchanger(&s, Controller::Agent, 4).trace.to_ndjson();
    assert_eq!(a, b);
}

#[test]
fn verify_accepts_honest_metrics_and_catches_tampering() {
    let c = compare(&stop_setup(1.2), 1);
    let doc = c.metrics_json();
    for run in [&c.agent, &c.sfc] {
        let recs = parse_ndjson(&run.trace.to_ndjson()).unwrap();
        let rep = verify_trace(&recs, Some(&doc));
        assert!(rep.passed(), "{:?}", rep.checks);
        assert_eq!(rep.kind, "exchanger");
    }
    let mut bad = doc.clone();
    bad["sfc"]["latencies"][0]["latency_s"] = json!(2.0);
    let recs = parse_ndjson(&c.sfc.trace.to_ndjson()).unwrap();
    let rep = verify_trace(&recs, Some(&bad));
    assert!(!rep.passed());
    assert!(rep.checks.iter().any(|c| c.name == "metric-latencies" && !c.passed));

    let mut gap = recs.clone();
    gap.remove(3);
    assert!(!verify_trace(&gap, None).passed());
}

#[test]
fn diff_reports_first_difference() {
    let s = stop_setup(1.2);
    let a = run_exchanger(&s, Controller::Agent, 1).trace.into_records();
    let b = run_exchanger(&s, Controller::Sfc, 1).trace.into_records();
    assert!(diff_traces(&a, &a).identical);
    let d = diff_traces(&a, &b);
    assert!(!d.identical);
    // the scenario record names the controller
    assert_eq!(d.first_difference, Some(0));
    let d = diff_traces(&a, &a[..a.len() - 2]);
    assert_eq!((d.first_difference, d.differing), (Some(a.len() - 2), 2));
}

#[test]
fn config_defaults_and_rejections() {
    let c = ScenarioConfig::from_toml("mode = \"exchanger_sfc\"").unwrap();
    assert_eq!(c.duration, 600.0);
    assert_eq!(c.seed, 0);
    let sc = c.resolve(Path::new(".")).unwrap();
    let Setup::Exchanger(s) = &sc.setup else { panic!() };
    assert_eq!(s.chart.polling_period, 5.0);
    assert_eq!(s.initial_temperature, 45.0);

    assert!(ScenarioConfig::from_toml("mode = \"exchanger_sfc\"\nspeed = 3").is_err());
    assert!(ScenarioConfig::from_toml("mode = \"boiler\"").is_err());
    let bad = ScenarioConfig::from_toml("mode = \"exchanger_sfc\"\nduration = 0.0").unwrap();
    assert!(matches!(bad.resolve(Path::new(".")), Err(ConfigError::Invalid(_))));

    let p = ScenarioConfig::from_toml("mode = \"exchanger_sfc\"\npolling_period = 2.0").unwrap();
    let Setup::Exchanger(s) = p.resolve(Path::new(".")).unwrap().setup else { panic!() };
    assert_eq!(s.chart.polling_period, 2.0);
}

#[test]
fn missing_or_broken_documents_abort_up_front() {
    let c = ScenarioConfig::from_toml("mode = \"exchanger_agent\"\n[documents]\nagent = \"nope.asl\"").unwrap();
    assert!(matches!(c.resolve(&scenarios()), Err(ConfigError::Io { .. })));

    let dir = std::env::temp_dir().join(format!("agentplant-cfg-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join("broken.asl"), "+x <- .").unwrap();
    std::fs::write(dir.join("run.toml"), "mode = \"exchanger_agent\"\n[documents]\nagent = \"broken.asl\"\n").unwrap();
    let err = load_scenario(&dir.join("run.toml")).unwrap_err();
    assert!(matches!(err, ConfigError::Document { what: "agent plan library", .. }), "{err}");

    std::fs::write(dir.join("lift.toml"), "mode = \"lifting\"\n[lifting]\ncontest_probability = 2.0\n").unwrap();
    assert!(matches!(load_scenario(&dir.join("lift.toml")), Err(ConfigError::Invalid(_))));
    std::fs::write(dir.join("inj.toml"), "mode = \"exchanger_agent\"\n[[injections]]\nkind = \"compressor_stop\"\nat = -1.0\n").unwrap();
    assert!(matches!(load_scenario(&dir.join("inj.toml")), Err(ConfigError::Invalid(_))));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn shipped_configs_resolve_and_pass() {
    let mut seen = 0;
    for entry in std::fs::read_dir(scenarios()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("toml") {
            continue;
        }
        seen += 1;
        let sc = load_scenario(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        if matches!(&sc.setup, Setup::Lifting(l) if l.settings.approver == ApproverKind::Interactive) {
            continue;
        }
        let out = run_scenario(&sc, sc.config.seed).unwrap();
        assert!(out.passed, "{}: {}", path.display(), out.metrics);
    }
    assert!(seen >= 8);
}

#[test]
fn lifting_through_the_builder() {
    let sc = load_scenario(&scenarios().join("lifting_all_accept.toml")).unwrap();
    let Setup::Lifting(l) = &sc.setup else { panic!() };
    let mut wf = build_workflow(l, 1, None, None).unwrap();
    assert_eq!(*wf.run(), Outcome::Achieved);
    let m = wf.metrics();
    let rep = verify_trace(wf.trace().records(), Some(&serde_json::to_value(&m).unwrap()));
    assert!(rep.passed(), "{:?}", rep.checks);
    assert_eq!(rep.recomputed["stages_achieved"], 5);
    assert_eq!(rep.recomputed["rounds"], 1);
}

#[test]
fn double_check_config_matches_programmatic_insert() {
    let a = load_scenario(&scenarios().join("lifting_double_check.toml")).unwrap();
    let b = ScenarioConfig::from_toml("mode = \"lifting\"\n[lifting]\ndouble_check = true").unwrap();
    let b = b.resolve(Path::new(".")).unwrap();
    let (Setup::Lifting(a), Setup::Lifting(b)) = (a.setup, b.setup) else { panic!() };
    assert_eq!(a.scheme.canonical(), b.scheme.canonical());
}

#[test]
fn ungated_apply_is_flagged() {
    let mut w = TraceWriter::new(1.0);
    w.push(0, "operator", "decision", None, json!({"proposal_id": "P-1", "actor": "operator", "verdict": "accept"}));
    w.push(1, "controller", "artifact-call", None, json!({"artifact": "control_system", "payload": {"proposal_id": "P-1"}}));
    assert_eq!(ungated_applies(w.records()), vec!["P-1 at tick 1".to_string()]);
    let mut w = TraceWriter::new(1.0);
    for a in ["engineer", "operator"] {
        w.push(0, a, "decision", None, json!({"proposal_id": "P-1", "actor": a, "verdict": "accept"}));
    }
    w.push(1, "controller", "artifact-call", None, json!({"artifact": "control_system", "payload": {"proposal_id": "P-1"}}));
    assert!(ungated_applies(w.records()).is_empty());
}
