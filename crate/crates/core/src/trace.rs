//! Line-delimited JSON traces shared by every runner.

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("record {index}: expected seq {expected}, found {found}")]
    SeqGap { index: usize, expected: u64, found: u64 },
    #[error("record {index}: (tick, sub) does not increase")]
    Order { index: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub seq: u64,
    pub tick: u64,
    /// Position inside the tick.
    pub sub: u32,
    pub clock: f64,
    pub source: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal: Option<String>,
    #[serde(default)]
    pub payload: Value,
}

type Listener = Box<dyn FnMut(&TraceRecord) + Send>;

/// Assigns `seq`, `sub` and `clock` and keeps the records in memory.
pub struct TraceWriter {
    dt: f64,
    records: Vec<TraceRecord>,
    last_tick: Option<u64>,
    sub: u32,
    listener: Option<Listener>,
}

impl std::fmt::Debug for TraceWriter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TraceWriter")
            .field("dt", &self.dt)
            .field("records", &self.records.len())
            .finish()
    }
}

/// Tick times are rounded to the nanosecond so `0.1 * 3` prints as 0.3.
pub fn clock_of(tick: u64, dt: f64) -> f64 {
    (tick as f64 * dt * 1e9).round() / 1e9
}

impl TraceWriter {
    pub fn new(dt: f64) -> Self {
        Self {
            dt,
            records: Vec::new(),
            last_tick: None,
            sub: 0,
            listener: None,
        }
    }

    /// Calls `f` with every record as it is written.
    pub fn set_listener(&mut self, f: impl FnMut(&TraceRecord) + Send + 'static) {
        self.listener = Some(Box::new(f));
    }

    pub fn push(&mut self, tick: u64, source: &str, kind: &str, goal: Option<&str>, payload: impl Serialize) {
        if self.last_tick != Some(tick) {
            self.last_tick = Some(tick);
            self.sub = 0;
        }
        let rec = TraceRecord {
            seq: self.records.len() as u64,
            tick,
            sub: self.sub,
            clock: clock_of(tick, self.dt),
            source: source.into(),
            kind: kind.into(),
            goal: goal.map(str::to_string),
            payload: serde_json::to_value(payload).unwrap_or(Value::Null),
        };
        self.sub += 1;
        if let Some(l) = self.listener.as_mut() {
            l(&rec);
        }
        self.records.push(rec);
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<TraceRecord> {
        self.records
    }

    pub fn to_ndjson(&self) -> String {
        to_ndjson(&self.records)
    }
}

pub fn to_ndjson(records: &[TraceRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("trace records serialize"));
        s.push('\n');
    }
    s
}

pub fn parse_ndjson(text: &str) -> Result<Vec<TraceRecord>, TraceError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|source| TraceError::Json { line: i + 1, source }))
        .collect()
}

/// Sequence numbers start at zero without gaps and (tick, sub) strictly increases.
pub fn check_sequence(records: &[TraceRecord]) -> Result<(), TraceError> {
    for (i, r) in records.iter().enumerate() {
        if r.seq != i as u64 {
            return Err(TraceError::SeqGap {
                index: i,
                expected: i as u64,
                found: r.seq,
            });
        }
        if i > 0 && (records[i - 1].tick, records[i - 1].sub) >= (r.tick, r.sub) {
            return Err(TraceError::Order { index: i });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;
    use std::sync::{Arc, Mutex};

    #[test]
    fn seq_and_sub_restart_per_tick() {
        let mut w = TraceWriter::new(0.1);
        w.push(0, "a", "x", None, json!({}));
        w.push(0, "a", "y", Some("g"), json!({}));
        w.push(3, "b", "z", None, json!(1));
        let r = w.records();
        assert_eq!(r.iter().map(|r| (r.seq, r.tick, r.sub)).collect::<Vec<_>>(), [(0, 0, 0), (1, 0, 1), (2, 3, 0)]);
        assert_eq!(r[2].clock, 0.3);
        check_sequence(r).unwrap();
    }

    #[test]
    fn ndjson_round_trip() {
        let mut w = TraceWriter::new(1.0);
        w.push(1, "coordinator", "goal-status", Some("g1"), json!({"status": "enabled"}));
        w.push(2, "plant", "sample", None, json!({"temperature": 51.5}));
        let text = w.to_ndjson();
        assert_eq!(text.lines().count(), 2);
        assert!(!text.lines().nth(1).unwrap().contains("goal"));
        assert_eq!(parse_ndjson(&text).unwrap(), w.records());
    }

    #[test]
    fn sequence_checks_catch_gaps_and_disorder() {
        let mut w = TraceWriter::new(1.0);
        for t in 0..3 {
            w.push(t, "s", "k", None, Value::Null);
        }
        let mut r = w.into_records();
        let mut gap = r.clone();
        gap.remove(1);
        assert!(matches!(check_sequence(&gap), Err(TraceError::SeqGap { index: 1, .. })));
        r[2].tick = 0;
        assert!(matches!(check_sequence(&r), Err(TraceError::Order { index: 2 })));
    }

    #[test]
    fn listener_sees_every_record() {
        let seen = Arc::new(Mutex::new(vec![]));
        let s2 = seen.clone();
        let mut w = TraceWriter::new(1.0);
        w.set_listener(move |r| s2.lock().unwrap().push(r.seq));
        w.push(0, "s", "k", None, Value::Null);
        w.push(0, "s", "k", None, Value::Null);
        assert_eq!(*seen.lock().unwrap(), [0, 1]);
    }

    #[test]
    fn bad_line_reports_its_number() {
        let err = parse_ndjson("{\"seq\":0,\"tick\":0,\"sub\":0,\"clock\":0,\"source\":\"s\",\"kind\":\"k\"}\nnot json\n")
            .unwrap_err();
        assert!(matches!(err, TraceError::Json { line: 2, .. }));
    }
}
