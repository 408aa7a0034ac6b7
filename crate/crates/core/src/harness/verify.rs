//! Offline checks over trace files: metric recomputation and trace diffs.

use std::collections::BTreeSet;

use serde::Serialize;
use serde_json::{json, Value};

use super::exchanger::{compute_metrics, Check};
use crate::trace::{check_sequence, TraceRecord};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    /// `exchanger` or `lifting`.
    pub kind: String,
    pub recomputed: Value,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Numbers compare to within 1e-9 (relative), everything else exactly.
fn json_close(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap_or(f64::NAN), y.as_f64().unwrap_or(f64::NAN));
            x == y || (x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1.0)
        }
        (Value::Array(x), Value::Array(y)) => x.len() == y.len() && x.iter().zip(y).all(|(a, b)| json_close(a, b)),
        (Value::Object(x), Value::Object(y)) => {
            x.len() == y.len() && x.iter().all(|(k, v)| y.get(k).is_some_and(|w| json_close(v, w)))
        }
        _ => a == b,
    }
}

fn compare_fields(checks: &mut Vec<Check>, recomputed: &Value, claimed: &Value, fields: &[&str]) {
    for f in fields {
        let ok = json_close(&recomputed[f], &claimed[f]);
        let detail = if ok {
            String::new()
        } else {
            format!("trace gives {}, metrics say {}", recomputed[f], claimed[f])
        };
        checks.push(Check::new(&format!("metric-{f}"), ok, detail));
    }
}

/// Recomputes the metrics a run reported from its trace alone and, when a
/// metrics document is given, compares the two. A document from a compare
/// run holds both controllers; the one matching the trace is used.
pub fn verify_trace(records: &[TraceRecord], metrics: Option<&Value>) -> VerifyReport {
    let mut checks = vec![];
    let seq = check_sequence(records);
    checks.push(Check::new(
        "trace-ordered",
        seq.is_ok(),
        seq.err().map(|e| e.to_string()).unwrap_or_default(),
    ));
    if records.iter().any(|r| r.kind == "scenario") {
        let (recomputed, ctl) = match compute_metrics(records) {
            Ok(m) => {
                let ctl = m.controller.name();
                (serde_json::to_value(&m).unwrap(), ctl)
            }
            Err(e) => {
                checks.push(Check::new("scenario", false, e.to_string()));
                return VerifyReport {
                    kind: "exchanger".into(),
                    recomputed: Value::Null,
                    checks,
                };
            }
        };
        if let Some(m) = metrics {
            let claimed = m.get(ctl).unwrap_or(m);
            compare_fields(
                &mut checks,
                &recomputed,
                claimed,
                &["latencies", "time_above_abnormal_s", "max_temperature", "settling_time_s", "final_temperature"],
            );
        }
        return VerifyReport {
            kind: "exchanger".into(),
            recomputed,
            checks,
        };
    }
    let recomputed = lifting_figures(records);
    let end = records.iter().rev().find(|r| r.kind == "workflow-end");
    checks.push(Check::new("workflow-ended", end.is_some(), ""));
    if let Some(end) = end {
        compare_fields(
            &mut checks,
            &recomputed,
            &end.payload["metrics"],
            &["rounds", "decisions", "receipts", "stages_achieved"],
        );
    }
    if let Some(m) = metrics {
        compare_fields(&mut checks, &recomputed, m, &["rounds", "decisions", "receipts", "stages_achieved"]);
    }
    let ungated = ungated_applies(records);
    checks.push(Check::new("human-gate", ungated.is_empty(), ungated.join(", ")));
    VerifyReport {
        kind: "lifting".into(),
        recomputed,
        checks,
    }
}

fn lifting_figures(records: &[TraceRecord]) -> Value {
    let rounds = records.iter().filter(|r| r.kind == "proposal").count();
    let decisions = records.iter().filter(|r| r.kind == "decision").count();
    let receipts: Vec<&Value> = records
        .iter()
        .filter(|r| r.kind == "receipt")
        .map(|r| &r.payload["receipt"])
        .collect();
    let stages: Vec<String> = records
        .iter()
        .find(|r| r.kind == "scheme")
        .and_then(|r| r.payload["stages"].as_array())
        .map(|a| a.iter().filter_map(|s| s.as_str().map(str::to_string)).collect())
        .unwrap_or_default();
    // the last status each stage reached
    let achieved = stages
        .iter()
        .filter(|s| {
            records
                .iter()
                .rev()
                .find(|r| r.kind == "goal-status" && r.goal.as_ref() == Some(*s))
                .is_some_and(|r| r.payload["status"] == "achieved")
        })
        .count();
    json!({"rounds": rounds, "decisions": decisions, "receipts": receipts, "stages_achieved": achieved})
}

/// Proposals sent to the control system without an engineer accept and an
/// operator accept recorded before the call.
pub fn ungated_applies(records: &[TraceRecord]) -> Vec<String> {
    let mut accepted: BTreeSet<(String, String)> = BTreeSet::new();
    let mut bad = vec![];
    for r in records {
        if r.kind == "decision" && r.payload["verdict"] == "accept" {
            let id = r.payload["proposal_id"].as_str().unwrap_or_default().to_string();
            let actor = r.payload["actor"].as_str().unwrap_or_default().to_string();
            accepted.insert((id, actor));
        }
        if r.kind == "artifact-call" && r.payload["artifact"] == "control_system" {
            let id = r.payload["payload"]["proposal_id"].as_str().unwrap_or_default().to_string();
            let ok = ["engineer", "operator"]
                .iter()
                .all(|a| accepted.contains(&(id.clone(), a.to_string())));
            if !ok {
                bad.push(format!("{id} at tick {}", r.tick));
            }
        }
    }
    bad
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceDiff {
    pub identical: bool,
    pub left_len: usize,
    pub right_len: usize,
    pub differing: usize,
    pub first_difference: Option<usize>,
}

/// Record-by-record comparison of two traces.
pub fn diff_traces(left: &[TraceRecord], right: &[TraceRecord]) -> TraceDiff {
    let n = left.len().min(right.len());
    let differing_idx: Vec<usize> = (0..n).filter(|&i| left[i] != right[i]).collect();
    let first = differing_idx
        .first()
        .copied()
        .or((left.len() != right.len()).then_some(n));
    TraceDiff {
        identical: first.is_none(),
        left_len: left.len(),
        right_len: right.len(),
        differing: differing_idx.len() + left.len().abs_diff(right.len()),
        first_difference: first,
    }
}
