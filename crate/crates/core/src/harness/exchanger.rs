//! Closed-loop runs of the heat exchanger under either controller.
//!
//! Tick order: plant events, sensor read, controller, stabiliser, valve
//! command, integration. Metrics are computed from the trace alone so the
//! verifier can recompute them from a trace file.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::ExchangerSetup;
use crate::agent::{ActionOutcome, Actuators, Agent, AgentRecord, BeliefChange, PlanLibrary, Polarity};
use crate::fuzzy::{RuleBase, Stabiliser};
use crate::plant::{Plant, PlantState, SensorSnapshot};
use crate::sfc::{poll_tick, ChartState, Value as SfcValue, VariableSnapshot};
use crate::term::Literal;
use crate::trace::{check_sequence, clock_of, TraceRecord, TraceWriter};

/// Half-width of the band around the setpoint that counts as settled.
pub const SETTLE_BAND: f64 = 1.0;

/// Stimulus percept and the action that answers it.
pub const REACTIONS: [(&str, &str); 2] = [
    ("+compressor_stopped", "take_valve"),
    ("+abnormal_temperature", "emergency_cooling"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Controller {
    Agent,
    Sfc,
}

impl Controller {
    pub fn name(self) -> &'static str {
        match self {
            Controller::Agent => "agent",
            Controller::Sfc => "sfc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Latency {
    pub stimulus: String,
    pub stimulus_tick: u64,
    pub response: String,
    pub response_tick: Option<u64>,
    pub latency_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangerMetrics {
    pub controller: Controller,
    pub ticks: u64,
    pub latencies: Vec<Latency>,
    pub time_above_abnormal_s: f64,
    pub max_temperature: f64,
    /// Seconds from the first injection until the temperature enters the
    /// band for good; `None` if it is outside the band at the end.
    pub settling_time_s: Option<f64>,
    pub final_temperature: f64,
    pub checks: Vec<Check>,
}

impl ExchangerMetrics {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Latency of the first answered occurrence of `stimulus`.
    pub fn latency(&self, stimulus: &str) -> Option<f64> {
        self.latencies.iter().find(|l| l.stimulus == stimulus).and_then(|l| l.latency_s)
    }
}

pub struct ExchangerRun {
    pub trace: TraceWriter,
    pub metrics: ExchangerMetrics,
}

/// Effects shared by both controllers: valve ownership, the stabiliser
/// and emergency cooling.
struct Shared<'a> {
    rulebase: &'a RuleBase,
    period_ticks: u64,
    owned: bool,
    stabiliser: Stabiliser,
    stabiliser_on: bool,
    next_update: u64,
    valve_cmd: Option<f64>,
    log: Vec<(String, Value)>,
}

impl Shared<'_> {
    fn apply(&mut self, action: &Literal, now: u64) -> ActionOutcome {
        match (action.functor.as_str(), action.args.as_slice()) {
            ("take_valve", []) => {
                self.owned = true;
                ActionOutcome::Done
            }
            ("stabiliser", [mode]) => match mode.as_atom() {
                Some("on") if self.owned => {
                    self.stabiliser.reset();
                    self.stabiliser_on = true;
                    self.next_update = now;
                    ActionOutcome::Done
                }
                Some("on") => ActionOutcome::Failed("valve not taken".into()),
                Some("off") => {
                    self.stabiliser_on = false;
                    ActionOutcome::Done
                }
                _ => ActionOutcome::Failed(format!("bad stabiliser mode {mode}")),
            },
            ("emergency_cooling", []) => {
                self.owned = true;
                self.stabiliser_on = false;
                self.valve_cmd = Some(1.0);
                ActionOutcome::Done
            }
            ("log_order", [order]) => {
                self.log.push(("order".into(), json!({"order": order.to_string()})));
                ActionOutcome::Done
            }
            _ => ActionOutcome::Unknown,
        }
    }

    fn stabilise(&mut self, now: u64, temp: f64, valve: f64) {
        if self.stabiliser_on && now >= self.next_update {
            self.valve_cmd = Some(self.stabiliser.update(self.rulebase, temp, valve));
            self.next_update = now + self.period_ticks;
        }
    }
}

impl Actuators for Shared<'_> {
    fn act(&mut self, _agent: &str, action: &Literal, now: u64) -> ActionOutcome {
        self.apply(action, now)
    }
}

fn sfc_variables(s: &SensorSnapshot) -> VariableSnapshot {
    VariableSnapshot::from([
        ("compressor_stopped".into(), SfcValue::Bool(s.compressor_stopped)),
        ("switch_on".into(), SfcValue::Bool(s.switch_open)),
        ("under_operation".into(), SfcValue::Bool(s.cond_op_normal)),
        ("abnormal_T".into(), SfcValue::Bool(s.abnormal_temperature)),
        ("temperature".into(), SfcValue::Num(s.temperature)),
    ])
}

fn change_text(c: &BeliefChange) -> String {
    let sign = if c.polarity == Polarity::Added { "+" } else { "-" };
    format!("{sign}{}", c.belief)
}

/// The agent's library with its sensor beliefs replaced by what the plant
/// shows at tick 0, so the first read raises no spurious events.
fn seeded_library(lib: &PlanLibrary, snap: &SensorSnapshot) -> PlanLibrary {
    let sensed = snap.beliefs();
    let functors = ["switch", "cond_op", "compressor_stopped", "abnormal_temperature"];
    let mut lib = lib.clone();
    lib.initial_beliefs.retain(|b| !functors.contains(&b.functor.as_str()));
    lib.initial_beliefs.extend(sensed);
    lib
}

fn record_agent(trace: &mut TraceWriter, k: u64, records: &[AgentRecord], log: &mut Vec<(String, Value)>) {
    let mut log = log.drain(..);
    for r in records {
        let mut v = serde_json::to_value(r).expect("agent records serialize");
        let kind = v["kind"].as_str().unwrap_or("record").to_string();
        if let Some(o) = v.as_object_mut() {
            o.remove("kind");
        }
        trace.push(k, "agent", &kind, None, v);
        if matches!(r, AgentRecord::Action { .. } | AgentRecord::StepFailed { .. }) {
            for (kind, payload) in log.by_ref() {
                trace.push(k, "agent", &kind, None, payload);
            }
        }
    }
    for (kind, payload) in log {
        trace.push(k, "agent", &kind, None, payload);
    }
}

/// Runs one controller against the plant for the configured duration.
pub fn run_exchanger(setup: &ExchangerSetup, controller: Controller, seed: u64) -> ExchangerRun {
    let p = &setup.params;
    let mut plant = Plant::new(p.clone(), PlantState::steady(p, setup.initial_temperature))
        .expect("setup was validated");
    for inj in &setup.injections {
        plant.inject(*inj).expect("setup was validated");
    }
    let mut trace = TraceWriter::new(p.tick_dt);
    trace.push(
        0,
        "harness",
        "scenario",
        None,
        json!({
            "controller": controller,
            "seed": seed,
            "tick_dt": p.tick_dt,
            "t_abnormal": p.t_abnormal,
            "t_setpoint": p.t_setpoint,
            "polling_period": setup.chart.polling_period,
            "initial_temperature": setup.initial_temperature,
            "injections": setup.injections,
            "duration": setup.duration,
        }),
    );
    let mut shared = Shared {
        rulebase: &setup.rulebase,
        period_ticks: p.ticks(setup.control_period).max(1),
        owned: false,
        stabiliser: Stabiliser::new(p.t_setpoint, setup.control_period),
        stabiliser_on: false,
        next_update: 0,
        valve_cmd: None,
        log: vec![],
    };
    let mut agent = Agent::new("agent", seeded_library(&setup.library, &plant.snapshot()));
    let mut chart_state = ChartState::new(&setup.chart);

    for k in 0..setup.ticks() {
        for note in plant.begin_tick() {
            trace.push(k, "plant", "plant-note", None, note);
        }
        let changes = plant.read_sensors();
        let snap = plant.snapshot();
        trace.push(k, "plant", "sample", None, json!({"T": snap.temperature, "u": snap.valve}));
        for c in &changes {
            trace.push(k, "plant", "percept", None, json!({"change": change_text(c)}));
        }
        match controller {
            Controller::Agent => {
                let rep = agent.reasoning_cycle(&changes, &[], k, &mut shared);
                record_agent(&mut trace, k, &rep.records, &mut shared.log);
            }
            Controller::Sfc => {
                let (actions, rec) = poll_tick(&setup.chart, &mut chart_state, &sfc_variables(&snap), p.clock(k));
                if let Some(rec) = rec {
                    trace.push(k, "sfc", "poll", None, rec);
                }
                for a in actions {
                    let outcome = shared.apply(&a, k);
                    let payload = json!({"action": a.to_string()});
                    match outcome {
                        ActionOutcome::Done => trace.push(k, "sfc", "action", None, payload),
                        ActionOutcome::Failed(reason) => {
                            trace.push(k, "sfc", "action-failed", None, json!({"action": a.to_string(), "reason": reason}))
                        }
                        ActionOutcome::Unknown => trace.push(k, "sfc", "action-unknown", None, payload),
                    }
                    for (kind, payload) in shared.log.drain(..) {
                        trace.push(k, "sfc", &kind, None, payload);
                    }
                }
            }
        }
        shared.stabilise(k, snap.temperature, plant.commanded_valve());
        if let Some(u) = shared.valve_cmd.take() {
            plant.actuate_valve(u);
        }
        plant.step();
    }
    let metrics = compute_metrics(trace.records()).expect("runner traces carry a scenario record");
    ExchangerRun { trace, metrics }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("trace has no scenario record")]
    NoScenario,
    #[error("scenario record is malformed: {0}")]
    BadScenario(String),
}

fn action_name(r: &TraceRecord) -> Option<String> {
    if r.kind != "action" {
        return None;
    }
    let a = r.payload["action"].as_str()?;
    Some(Literal::parse(a).map(|l| l.functor).unwrap_or_else(|_| a.to_string()))
}

/// Recomputes every exchanger metric from trace records.
pub fn compute_metrics(records: &[TraceRecord]) -> Result<ExchangerMetrics, MetricsError> {
    let sc = records
        .iter()
        .find(|r| r.kind == "scenario")
        .ok_or(MetricsError::NoScenario)?;
    let num = |k: &str| {
        sc.payload[k]
            .as_f64()
            .ok_or_else(|| MetricsError::BadScenario(format!("missing `{k}`")))
    };
    let dt = num("tick_dt")?;
    let t_abn = num("t_abnormal")?;
    let sp = num("t_setpoint")?;
    let controller: Controller = serde_json::from_value(sc.payload["controller"].clone())
        .map_err(|e| MetricsError::BadScenario(e.to_string()))?;
    let first_injection = sc.payload["injections"]
        .as_array()
        .into_iter()
        .flatten()
        .filter_map(|i| i["at"].as_f64())
        .fold(None, |m: Option<f64>, t| Some(m.map_or(t, |m| m.min(t))))
        .unwrap_or(0.0);

    let mut latencies = vec![];
    for (i, r) in records.iter().enumerate() {
        if r.source != "plant" || r.kind != "percept" {
            continue;
        }
        let Some(change) = r.payload["change"].as_str() else { continue };
        for (stimulus, response) in REACTIONS {
            if change != stimulus {
                continue;
            }
            let answer = records[i + 1..]
                .iter()
                .find(|a| a.source == controller.name() && action_name(a).as_deref() == Some(response));
            latencies.push(Latency {
                stimulus: stimulus.into(),
                stimulus_tick: r.tick,
                response: response.into(),
                response_tick: answer.map(|a| a.tick),
                latency_s: answer.map(|a| clock_of(a.tick - r.tick, dt)),
            });
        }
    }

    let samples: Vec<(u64, f64, f64)> = records
        .iter()
        .filter(|r| r.kind == "sample")
        .map(|r| (r.tick, r.payload["T"].as_f64().unwrap_or(f64::NAN), r.payload["u"].as_f64().unwrap_or(f64::NAN)))
        .collect();
    let above = samples.iter().filter(|s| s.1 >= t_abn).count() as u64;
    let max_temperature = samples.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    let final_temperature = samples.last().map_or(f64::NAN, |s| s.1);
    // first sample of the final in-band stretch
    let settle_idx = samples.iter().rposition(|s| (s.1 - sp).abs() > SETTLE_BAND).map_or(0, |i| i + 1);
    let settling_time_s = samples
        .get(settle_idx)
        .map(|s| clock_of(s.0, dt) - first_injection)
        .map(|t| (t.max(0.0) * 1e9).round() / 1e9);

    let mut checks = vec![];
    let seq = check_sequence(records);
    checks.push(Check::new(
        "trace-ordered",
        seq.is_ok(),
        seq.err().map(|e| e.to_string()).unwrap_or_default(),
    ));
    let finite = samples.iter().all(|s| s.1.is_finite());
    checks.push(Check::new("temperature-finite", finite, ""));
    let bad_valve = samples.iter().find(|s| !(0.0..=1.0).contains(&s.2));
    checks.push(Check::new(
        "valve-in-range",
        bad_valve.is_none(),
        bad_valve.map(|s| format!("tick {}: u = {}", s.0, s.2)).unwrap_or_default(),
    ));

    Ok(ExchangerMetrics {
        controller,
        ticks: samples.len() as u64,
        latencies,
        time_above_abnormal_s: clock_of(above, dt),
        max_temperature,
        settling_time_s,
        final_temperature,
        checks,
    })
}

/// Both controllers on the same setup plus the cross-checks between them.
pub struct Comparison {
    pub agent: ExchangerRun,
    pub sfc: ExchangerRun,
    pub checks: Vec<Check>,
}

impl Comparison {
    pub fn passed(&self) -> bool {
        self.agent.metrics.passed() && self.sfc.metrics.passed() && self.checks.iter().all(|c| c.passed)
    }

    pub fn metrics_json(&self) -> Value {
        json!({"agent": self.agent.metrics, "sfc": self.sfc.metrics, "checks": self.checks})
    }
}

pub fn compare(setup: &ExchangerSetup, seed: u64) -> Comparison {
    let agent = run_exchanger(setup, Controller::Agent, seed);
    let sfc = run_exchanger(setup, Controller::Sfc, seed);
    let (a, s) = (&agent.metrics, &sfc.metrics);
    let mut slower = vec![];
    for (la, ls) in a.latencies.iter().zip(&s.latencies) {
        if let (Some(x), Some(y)) = (la.latency_s, ls.latency_s) {
            if la.stimulus == ls.stimulus && x > y {
                slower.push(format!("{} at tick {}", la.stimulus, la.stimulus_tick));
            }
        }
    }
    let checks = vec![
        Check::new("agent-not-slower", slower.is_empty(), slower.join(", ")),
        Check::new(
            "agent-not-hotter",
            a.time_above_abnormal_s <= s.time_above_abnormal_s,
            format!("{} s vs {} s above T_abnormal", a.time_above_abnormal_s, s.time_above_abnormal_s),
        ),
    ];
    Comparison { agent, sfc, checks }
}
