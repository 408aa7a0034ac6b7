//! Entities are either agents (reached by messages) or artifacts (reached by
//! operation calls). The registry routes both and refuses to mix them up.
//!
//! Shipped in-process stubs, all deterministic:
//!
//! | artifact       | operation        | result |
//! |----------------|------------------|--------|
//! | process_info   | `read_reservoir` | the reservoir fixture it was built with |
//! | modeller       | `build_model`    | productivity index by least squares through the origin on `rate = PI * (P - p_wf)` |
//! | optimizer      | `optimise`       | argmax of `PI*(P*x - x^2)/100 + PI*(120*y - y^2)/100` over the box, x = injection_rate, y = pump_frequency |
//! | control_system | `apply`          | echo of the parameters with `ack: true` |
//! | agency         | `report`         | fresh receipt id and the SHA-256 of the canonical report body |

use std::collections::{BTreeMap, VecDeque};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::agent::{Message, Performative};
use crate::term::Literal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Agent,
    Artifact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transport {
    #[default]
    InProcess,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityDescriptor {
    pub name: String,
    pub kind: EntityKind,
    #[serde(default)]
    pub transport: Transport,
    #[serde(default)]
    pub endpoint: Option<String>,
}

impl EntityDescriptor {
    pub fn agent(name: &str) -> Self {
        Self {
            name: name.into(),
            kind: EntityKind::Agent,
            transport: Transport::InProcess,
            endpoint: None,
        }
    }

    pub fn artifact(name: &str) -> Self {
        Self {
            name: name.into(),
            kind: EntityKind::Artifact,
            transport: Transport::InProcess,
            endpoint: None,
        }
    }

    pub fn http_artifact(name: &str, endpoint: &str) -> Self {
        Self {
            name: name.into(),
            kind: EntityKind::Artifact,
            transport: Transport::Http,
            endpoint: Some(endpoint.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MediationError {
    #[error("entity `{0}` is already registered")]
    Duplicate(String),
    #[error("entity `{name}` has a malformed endpoint `{endpoint}`")]
    BadEndpoint { name: String, endpoint: String },
    #[error("in-process artifact `{0}` has no implementation")]
    MissingImplementation(String),
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),
    #[error("entity `{name}` is an {actual:?}, not an {expected:?}")]
    KindMismatch { name: String, expected: EntityKind, actual: EntityKind },
    #[error("call to `{0}` timed out")]
    Timeout(String),
    #[error("transport to `{name}` failed: {message}")]
    Transport { name: String, message: String },
    #[error("`{name}` answered with fault {code}: {message}")]
    Fault { name: String, code: String, message: String },
}

impl MediationError {
    /// Whether the caller may reasonably try the same call again.
    pub fn is_retryable(&self) -> bool {
        match self {
            MediationError::Timeout(_) | MediationError::Transport { .. } => true,
            MediationError::Fault { code, .. } => code == "unavailable",
            _ => false,
        }
    }
}

/// A fault returned by an artifact implementation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fault {
    pub code: String,
    pub message: String,
}

impl Fault {
    pub fn schema(message: impl Into<String>) -> Self {
        Self {
            code: "schema".into(),
            message: message.into(),
        }
    }

    pub fn unknown_operation(op: &str) -> Self {
        Self {
            code: "unknown_operation".into(),
            message: format!("no operation `{op}`"),
        }
    }
}

pub trait Artifact: Send {
    fn invoke(&mut self, operation: &str, payload: &Value) -> Result<Value, Fault>;
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransportError {
    #[error("timed out")]
    Timeout,
    #[error("{0}")]
    Io(String),
}

/// Blocking HTTP POST of a JSON document; returns status and JSON body.
pub trait HttpTransport: Send {
    fn post_json(&self, url: &str, body: &Value, timeout: Duration) -> Result<(u16, Value), TransportError>;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArtifactCall {
    pub correlation: u64,
    pub artifact: String,
    pub operation: String,
    pub payload: Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CallStatus {
    Ok,
    Fault,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArtifactResult {
    pub correlation: u64,
    pub status: CallStatus,
    pub payload: Value,
}

struct Entry {
    descriptor: EntityDescriptor,
    implementation: Option<Box<dyn Artifact>>,
}

pub struct Registry {
    /// Agents and artifacts live in separate namespaces, so an agent may
    /// share its name with the artifact it drives.
    entries: BTreeMap<(EntityKind, String), Entry>,
    http: Option<Box<dyn HttpTransport>>,
    pub timeout: Duration,
    next_correlation: u64,
}

impl Default for Registry {
    fn default() -> Self {
        Self {
            entries: BTreeMap::new(),
            http: None,
            timeout: Duration::from_secs(5),
            next_correlation: 1,
        }
    }
}

fn endpoint_ok(e: &str) -> bool {
    let rest = e.strip_prefix("http://").or_else(|| e.strip_prefix("https://"));
    match rest {
        Some(r) => {
            let host = r.split('/').next().unwrap_or("");
            !host.is_empty() && !host.contains(char::is_whitespace)
        }
        None => false,
    }
}

impl Registry {
    pub fn with_http(mut self, transport: Box<dyn HttpTransport>) -> Self {
        self.http = Some(transport);
        self
    }

    pub fn register_entity(&mut self, descriptor: EntityDescriptor) -> Result<(), MediationError> {
        self.insert(descriptor, None)
    }

    pub fn register_artifact(&mut self, descriptor: EntityDescriptor, imp: Box<dyn Artifact>) -> Result<(), MediationError> {
        self.insert(descriptor, Some(imp))
    }

    fn insert(&mut self, d: EntityDescriptor, imp: Option<Box<dyn Artifact>>) -> Result<(), MediationError> {
        if self.entries.contains_key(&(d.kind, d.name.clone())) {
            return Err(MediationError::Duplicate(d.name));
        }
        if d.transport == Transport::Http {
            let ep = d.endpoint.clone().unwrap_or_default();
            if !endpoint_ok(&ep) {
                return Err(MediationError::BadEndpoint {
                    name: d.name,
                    endpoint: ep,
                });
            }
        } else if d.kind == EntityKind::Artifact && imp.is_none() {
            return Err(MediationError::MissingImplementation(d.name));
        }
        self.entries.insert(
            (d.kind, d.name.clone()),
            Entry {
                descriptor: d,
                implementation: imp,
            },
        );
        Ok(())
    }

    pub fn descriptor(&self, kind: EntityKind, name: &str) -> Option<&EntityDescriptor> {
        self.entries.get(&(kind, name.to_string())).map(|e| &e.descriptor)
    }

    pub fn entities(&self) -> impl Iterator<Item = &EntityDescriptor> {
        self.entries.values().map(|e| &e.descriptor)
    }

    fn expect_kind(&self, name: &str, kind: EntityKind) -> Result<(), MediationError> {
        if self.entries.contains_key(&(kind, name.to_string())) {
            return Ok(());
        }
        match self.entries.keys().find(|(_, n)| n == name) {
            Some((actual, _)) => Err(MediationError::KindMismatch {
                name: name.into(),
                expected: kind,
                actual: *actual,
            }),
            None => Err(MediationError::UnknownEntity(name.into())),
        }
    }

    /// Calls an artifact operation. The call record is returned even on
    /// failure so a trace can show what was attempted.
    pub fn invoke_artifact(
        &mut self,
        name: &str,
        operation: &str,
        payload: Value,
    ) -> (ArtifactCall, Result<ArtifactResult, MediationError>) {
        let call = ArtifactCall {
            correlation: self.next_correlation,
            artifact: name.into(),
            operation: operation.into(),
            payload,
        };
        self.next_correlation += 1;
        let res = self.dispatch(&call);
        (call, res)
    }

    fn dispatch(&mut self, call: &ArtifactCall) -> Result<ArtifactResult, MediationError> {
        self.expect_kind(&call.artifact, EntityKind::Artifact)?;
        let timeout = self.timeout;
        let entry = self.entries.get_mut(&(EntityKind::Artifact, call.artifact.clone())).unwrap();
        let name = call.artifact.clone();
        let outcome = match entry.descriptor.transport {
            Transport::InProcess => {
                let imp = entry
                    .implementation
                    .as_mut()
                    .ok_or_else(|| MediationError::MissingImplementation(name.clone()))?;
                imp.invoke(&call.operation, &call.payload)
            }
            Transport::Http => {
                let http = self.http.as_ref().ok_or_else(|| MediationError::Transport {
                    name: name.clone(),
                    message: "no HTTP transport configured".into(),
                })?;
                let url = format!(
                    "{}/{}",
                    entry.descriptor.endpoint.as_deref().unwrap_or("").trim_end_matches('/'),
                    call.operation
                );
                match http.post_json(&url, &call.payload, timeout) {
                    Err(TransportError::Timeout) => return Err(MediationError::Timeout(name)),
                    Err(TransportError::Io(message)) => return Err(MediationError::Transport { name, message }),
                    Ok((200..=299, body)) => Ok(body),
                    Ok((status, body)) => Err(serde_json::from_value::<Fault>(body).unwrap_or(Fault {
                        code: format!("http_{status}"),
                        message: "malformed fault body".into(),
                    })),
                }
            }
        };
        match outcome {
            Ok(payload) => Ok(ArtifactResult {
                correlation: call.correlation,
                status: CallStatus::Ok,
                payload,
            }),
            Err(f) => Err(MediationError::Fault {
                name,
                code: f.code,
                message: f.message,
            }),
        }
    }

    /// Validates a message route; the caller queues it on a [`MessageBus`].
    pub fn check_message(&self, from: &str, to: &str) -> Result<(), MediationError> {
        self.expect_kind(from, EntityKind::Agent)?;
        self.expect_kind(to, EntityKind::Agent)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Receipt {
    pub id: u64,
    pub deliver_at: u64,
}

/// Lock-step mailbox: messages sent at tick k are delivered at k + 1, in
/// send order.
#[derive(Debug, Default, Clone)]
pub struct MessageBus {
    queue: VecDeque<(u64, Message)>,
    next_id: u64,
}

impl MessageBus {
    pub fn send_message(
        &mut self,
        registry: &Registry,
        from: &str,
        to: &str,
        performative: Performative,
        content: Literal,
        now: u64,
    ) -> Result<Receipt, MediationError> {
        registry.check_message(from, to)?;
        self.enqueue(
            Message {
                from: from.into(),
                to: to.into(),
                performative,
                content,
            },
            now,
        );
        Ok(Receipt {
            id: self.next_id,
            deliver_at: now + 1,
        })
    }

    pub(crate) fn enqueue(&mut self, m: Message, now: u64) {
        self.next_id += 1;
        self.queue.push_back((now + 1, m));
    }

    /// Removes and returns the messages due at `now` for `to`.
    pub fn deliver(&mut self, to: &str, now: u64) -> Vec<Message> {
        let mut out = vec![];
        let mut keep = VecDeque::with_capacity(self.queue.len());
        for (t, m) in self.queue.drain(..) {
            if t <= now && m.to == to {
                out.push(m);
            } else {
                keep.push_back((t, m));
            }
        }
        self.queue = keep;
        out
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }
}

/// SHA-256 of the canonical (sorted-key, compact) JSON form.
pub fn body_hash(v: &Value) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(v).expect("json values serialize")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestPoint {
    pub flowing_pressure: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReservoirData {
    pub well: String,
    pub version: u32,
    pub reservoir_pressure: f64,
    pub test_points: Vec<TestPoint>,
}

pub struct ProcessInfoStub {
    data: ReservoirData,
}

impl ProcessInfoStub {
    pub fn new(data: ReservoirData) -> Self {
        Self { data }
    }
}

impl Artifact for ProcessInfoStub {
    fn invoke(&mut self, op: &str, _: &Value) -> Result<Value, Fault> {
        match op {
            "read_reservoir" => Ok(serde_json::to_value(&self.data).unwrap()),
            _ => Err(Fault::unknown_operation(op)),
        }
    }
}

/// Least-squares productivity index through the origin.
pub fn productivity_index(data: &ReservoirData) -> Option<f64> {
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for p in &data.test_points {
        let d = data.reservoir_pressure - p.flowing_pressure;
        sxy += d * p.rate;
        sxx += d * d;
    }
    (sxx > 0.0).then(|| sxy / sxx)
}

pub struct ModellerStub;

impl Artifact for ModellerStub {
    fn invoke(&mut self, op: &str, payload: &Value) -> Result<Value, Fault> {
        if op != "build_model" {
            return Err(Fault::unknown_operation(op));
        }
        let data: ReservoirData =
            serde_json::from_value(payload.clone()).map_err(|e| Fault::schema(format!("reservoir data: {e}")))?;
        let pi = productivity_index(&data).ok_or_else(|| Fault::schema("test points carry no drawdown"))?;
        Ok(json!({
            "model_ref": format!("M-{}", &body_hash(payload)[..12]),
            "well": data.well,
            "productivity_index": pi,
            "pressure": data.reservoir_pressure,
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub model_ref: String,
    pub well: String,
    pub productivity_index: f64,
    pub pressure: f64,
}

/// Box bounds per parameter.
pub type Constraints = BTreeMap<String, [f64; 2]>;

/// Parameters of the stub objective.
pub const PARAMETERS: [&str; 2] = ["injection_rate", "pump_frequency"];

pub fn objective(model: &Model, x: f64, y: f64) -> f64 {
    let pi = model.productivity_index;
    pi * (model.pressure * x - x * x) / 100.0 + pi * (120.0 * y - y * y) / 100.0
}

/// Closed-form maximiser: the objective is separable and concave in each
/// parameter, so the optimum is each unconstrained peak clamped to its box.
pub fn optimise(model: &Model, constraints: &Constraints) -> Result<(BTreeMap<String, f64>, f64), Fault> {
    let peaks = [model.pressure / 2.0, 60.0];
    let mut params = BTreeMap::new();
    for (name, peak) in PARAMETERS.iter().zip(peaks) {
        let [lo, hi] = *constraints
            .get(*name)
            .ok_or_else(|| Fault::schema(format!("constraints lack `{name}`")))?;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Fault::schema(format!("empty or invalid box for `{name}`")));
        }
        params.insert(name.to_string(), peak.clamp(lo, hi));
    }
    let value = objective(model, params["injection_rate"], params["pump_frequency"]);
    Ok((params, value))
}

pub struct OptimizerStub;

impl Artifact for OptimizerStub {
    fn invoke(&mut self, op: &str, payload: &Value) -> Result<Value, Fault> {
        if op != "optimise" {
            return Err(Fault::unknown_operation(op));
        }
        let model: Model = serde_json::from_value(payload.get("model").cloned().unwrap_or(Value::Null))
            .map_err(|e| Fault::schema(format!("model: {e}")))?;
        let constraints: Constraints = serde_json::from_value(payload.get("constraints").cloned().unwrap_or(Value::Null))
            .map_err(|e| Fault::schema(format!("constraints: {e}")))?;
        let (parameters, objective_value) = optimise(&model, &constraints)?;
        Ok(json!({
            "model_ref": model.model_ref,
            "parameters": parameters,
            "objective_value": objective_value,
        }))
    }
}

pub struct ControlSystemStub;

impl Artifact for ControlSystemStub {
    fn invoke(&mut self, op: &str, payload: &Value) -> Result<Value, Fault> {
        if op != "apply" {
            return Err(Fault::unknown_operation(op));
        }
        let params = payload
            .get("parameters")
            .filter(|p| p.is_object())
            .ok_or_else(|| Fault::schema("setup needs a `parameters` object"))?;
        Ok(json!({ "ack": true, "applied": params }))
    }
}

/// Issues sequential receipts; can be told to fail its first calls.
pub struct AgencyStub {
    issued: u64,
    faults_left: u32,
}

impl AgencyStub {
    pub fn new(faults_before_success: u32) -> Self {
        Self {
            issued: 0,
            faults_left: faults_before_success,
        }
    }
}

impl Artifact for AgencyStub {
    fn invoke(&mut self, op: &str, payload: &Value) -> Result<Value, Fault> {
        if op != "report" {
            return Err(Fault::unknown_operation(op));
        }
        if !payload.is_object() {
            return Err(Fault::schema("report must be an object"));
        }
        if self.faults_left > 0 {
            self.faults_left -= 1;
            return Err(Fault {
                code: "unavailable".into(),
                message: "agency endpoint unavailable".into(),
            });
        }
        self.issued += 1;
        Ok(json!({
            "receipt": format!("R-{:06}", self.issued),
            "body_hash": body_hash(payload),
        }))
    }
}

/// Builds one of the shipped stubs by name.
pub fn stub(name: &str, reservoir: &ReservoirData, agency_faults: u32) -> Option<Box<dyn Artifact>> {
    Some(match name {
        "process_info" => Box::new(ProcessInfoStub::new(reservoir.clone())),
        "modeller" => Box::new(ModellerStub),
        "optimizer" => Box::new(OptimizerStub),
        "control_system" => Box::new(ControlSystemStub),
        "agency" => Box::new(AgencyStub::new(agency_faults)),
        _ => return None,
    })
}

pub const STUB_NAMES: [&str; 5] = ["process_info", "modeller", "optimizer", "control_system", "agency"];

#[cfg(test)]
mod tests {
    use super::*;

    const RESERVOIR: &str = include_str!("../../../scenarios/lifting/reservoir.json");

    fn reservoir() -> ReservoirData {
        serde_json::from_str(RESERVOIR).unwrap()
    }

    fn registry() -> Registry {
        let mut r = Registry::default();
        for n in STUB_NAMES {
            r.register_artifact(EntityDescriptor::artifact(n), stub(n, &reservoir(), 0).unwrap())
                .unwrap();
        }
        for a in ["chatbot", "engineer"] {
            r.register_entity(EntityDescriptor::agent(a)).unwrap();
        }
        r
    }

    #[test]
    fn register_and_resolve() {
        let r = registry();
        assert_eq!(r.descriptor(EntityKind::Artifact, "modeller").unwrap().kind, EntityKind::Artifact);
        assert!(r.descriptor(EntityKind::Agent, "modeller").is_none());
    }

    #[test]
    fn duplicate_rejected() {
        let mut r = registry();
        assert_eq!(
            r.register_entity(EntityDescriptor::agent("chatbot")),
            Err(MediationError::Duplicate("chatbot".into()))
        );
    }

    #[test]
    fn malformed_endpoint_rejected() {
        let mut r = Registry::default();
        for bad in ["ftp://x", "http://", "localhost:80", "http://a b/"] {
            assert!(matches!(
                r.register_entity(EntityDescriptor::http_artifact("x", bad)),
                Err(MediationError::BadEndpoint { .. })
            ));
        }
        r.register_entity(EntityDescriptor::http_artifact("x", "http://127.0.0.1:9/artifacts/x"))
            .unwrap();
    }

    #[test]
    fn modeller_is_pure() {
        let mut r = registry();
        let payload = serde_json::to_value(reservoir()).unwrap();
        let (_, a) = r.invoke_artifact("modeller", "build_model", payload.clone());
        let a = a.unwrap();
        for _ in 0..100 {
            let (_, b) = r.invoke_artifact("modeller", "build_model", payload.clone());
            assert_eq!(serde_json::to_vec(&b.unwrap().payload).unwrap(), serde_json::to_vec(&a.payload).unwrap());
        }
    }

    #[test]
    fn productivity_index_oracle() {
        // exact data on rate = 0.8 * (P - p_wf) recovers 0.8
        let d = ReservoirData {
            well: "w".into(),
            version: 1,
            reservoir_pressure: 200.0,
            test_points: [150.0, 120.0, 90.0]
                .iter()
                .map(|p| TestPoint {
                    flowing_pressure: *p,
                    rate: 0.8 * (200.0 - p),
                })
                .collect(),
        };
        assert!((productivity_index(&d).unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn optimiser_matches_grid_search() {
        let model = Model {
            model_ref: "M-x".into(),
            well: "w".into(),
            productivity_index: 1.3,
            pressure: 210.0,
        };
        let c: Constraints = [
            ("injection_rate".to_string(), [40.0, 160.0]),
            ("pump_frequency".to_string(), [30.0, 55.0]),
        ]
        .into();
        let (p, v) = optimise(&model, &c).unwrap();
        let mut best = (f64::MIN, 0.0, 0.0);
        for i in 0..=1200 {
            for j in 0..=250 {
                let x = 40.0 + i as f64 * 0.1;
                let y = 30.0 + j as f64 * 0.1;
                let f = objective(&model, x, y);
                if f > best.0 {
                    best = (f, x, y);
                }
            }
        }
        assert!((p["injection_rate"] - best.1).abs() < 0.051);
        assert!((p["pump_frequency"] - best.2).abs() < 0.051);
        assert!(v >= best.0 - 1e-9);
    }

    #[test]
    fn optimiser_repeatable() {
        let mut r = registry();
        let payload = json!({
            "model": {"model_ref": "M-1", "well": "w", "productivity_index": 1.0, "pressure": 200.0},
            "constraints": {"injection_rate": [40.0, 160.0], "pump_frequency": [30.0, 55.0]}
        });
        let (_, first) = r.invoke_artifact("optimizer", "optimise", payload.clone());
        let first = first.unwrap().payload;
        assert_eq!(first["parameters"]["injection_rate"], json!(100.0));
        assert_eq!(first["parameters"]["pump_frequency"], json!(55.0));
        for _ in 0..100 {
            let (_, again) = r.invoke_artifact("optimizer", "optimise", payload.clone());
            assert_eq!(again.unwrap().payload, first);
        }
    }

    #[test]
    fn control_system_echoes() {
        let mut r = registry();
        let setup = json!({"parameters": {"injection_rate": 100.0}});
        let (_, res) = r.invoke_artifact("control_system", "apply", setup);
        assert_eq!(res.unwrap().payload["applied"], json!({"injection_rate": 100.0}));
    }

    #[test]
    fn agency_receipts_differ_but_hash_matches() {
        let mut r = registry();
        let report = json!({"parameters": {"x": 1}});
        let (_, a) = r.invoke_artifact("agency", "report", report.clone());
        let (_, b) = r.invoke_artifact("agency", "report", report);
        let (a, b) = (a.unwrap().payload, b.unwrap().payload);
        assert_ne!(a["receipt"], b["receipt"]);
        assert_eq!(a["body_hash"], b["body_hash"]);
    }

    #[test]
    fn schema_violation_faults() {
        let mut r = registry();
        let (_, res) = r.invoke_artifact("modeller", "build_model", json!({"nope": 1}));
        assert!(matches!(res, Err(MediationError::Fault { ref code, .. }) if code == "schema"));
    }

    #[test]
    fn unknown_and_mismatched_entities() {
        let mut r = registry();
        let (_, res) = r.invoke_artifact("nobody", "x", Value::Null);
        assert_eq!(res, Err(MediationError::UnknownEntity("nobody".into())));
        let (_, res) = r.invoke_artifact("engineer", "x", Value::Null);
        assert!(matches!(res, Err(MediationError::KindMismatch { .. })));
        let mut bus = MessageBus::default();
        let err = bus
            .send_message(&r, "chatbot", "modeller", Performative::Tell, Literal::atom("hi"), 0)
            .unwrap_err();
        assert!(matches!(err, MediationError::KindMismatch { .. }));
        assert!(bus.is_empty());
    }

    #[test]
    fn correlation_ids_pair_up() {
        let mut r = registry();
        let (c1, r1) = r.invoke_artifact("control_system", "apply", json!({"parameters": {}}));
        let (c2, r2) = r.invoke_artifact("control_system", "apply", json!({"parameters": {}}));
        assert_eq!(c1.correlation, r1.unwrap().correlation);
        assert_eq!(c2.correlation, r2.unwrap().correlation);
        assert_ne!(c1.correlation, c2.correlation);
    }

    #[test]
    fn messages_next_tick_in_order() {
        let r = registry();
        let mut bus = MessageBus::default();
        let rc = bus
            .send_message(&r, "chatbot", "engineer", Performative::Tell, Literal::atom("a"), 4)
            .unwrap();
        assert_eq!(rc.deliver_at, 5);
        bus.send_message(&r, "chatbot", "engineer", Performative::Tell, Literal::atom("b"), 4)
            .unwrap();
        assert!(bus.deliver("engineer", 4).is_empty());
        let got: Vec<String> = bus.deliver("engineer", 5).into_iter().map(|m| m.content.to_string()).collect();
        assert_eq!(got, vec!["a", "b"]);
    }

    struct FakeHttp(Result<(u16, Value), TransportError>);

    impl HttpTransport for FakeHttp {
        fn post_json(&self, _: &str, _: &Value, _: Duration) -> Result<(u16, Value), TransportError> {
            self.0.clone()
        }
    }

    #[test]
    fn http_errors_are_classified() {
        let cases = [
            (Err(TransportError::Timeout), true),
            (Err(TransportError::Io("refused".into())), true),
            (Ok((422, json!({"code": "schema", "message": "bad"}))), false),
        ];
        for (reply, retry) in cases {
            let mut r = Registry::default().with_http(Box::new(FakeHttp(reply)));
            r.register_entity(EntityDescriptor::http_artifact("opt", "http://127.0.0.1:1/artifacts/opt"))
                .unwrap();
            let (_, res) = r.invoke_artifact("opt", "optimise", json!({}));
            assert_eq!(res.unwrap_err().is_retryable(), retry);
        }
    }
}
