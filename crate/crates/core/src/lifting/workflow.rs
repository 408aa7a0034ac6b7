use std::collections::{BTreeMap, VecDeque};

use serde::Serialize;
use serde_json::{json, Value};

use super::approval::{gate_open, Actor, ApprovalDecision, Approver, DecisionDesk, OptimizationProposal, ReviewRequest, Verdict};
use crate::agent::{ActionOutcome, Actuators, Agent, AgentRecord, BeliefChange, IntentionId, Performative, PlanLibrary};
use crate::mediation::{
    stub, Constraints, EntityDescriptor, EntityKind, MediationError, Model, Registry, MessageBus, ReservoirData,
    STUB_NAMES,
};
use crate::org::{commit, executable_goals, mark, reopen, GoalScheme, GoalStatus, SchemeError, SchemeState, StatusChange};
use crate::term::{Literal, Term};
use crate::trace::TraceWriter;

pub const COORDINATOR: &str = "coordinator";

/// Artifacts the workflow calls; all must be registered.
pub const REQUIRED_ARTIFACTS: [&str; 5] = STUB_NAMES;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkflowConfig {
    /// Engineer reviews allowed before a contest ends the workflow.
    pub max_rounds: u32,
    pub constraints: Constraints,
    pub max_ticks: u64,
    /// Ticks a human may stay silent before a reminder is logged.
    pub reminder_after: Option<u64>,
    /// Ticks a human may stay silent before the workflow gives up.
    pub abort_after: Option<u64>,
    /// Calls to the agency per report, the first one included.
    pub report_attempts: u32,
}

impl Default for WorkflowConfig {
    fn default() -> Self {
        Self {
            max_rounds: 5,
            constraints: BTreeMap::from([
                ("injection_rate".into(), [20.0, 150.0]),
                ("pump_frequency".into(), [30.0, 70.0]),
            ]),
            max_ticks: 10_000,
            reminder_after: None,
            abort_after: None,
            report_attempts: 4,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WorkflowError {
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error(transparent)]
    Mediation(#[from] MediationError),
    #[error("no agent plays role `{0}`")]
    MissingAgent(String),
    #[error("artifact `{0}` is not registered")]
    MissingArtifact(String),
    #[error("max_rounds must be at least 1")]
    NoRounds,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Outcome {
    Achieved,
    Failed { goal: Option<String>, reason: String },
    Aborted { goal: String, reason: String },
    Stalled { ticks: u64 },
}

impl Outcome {
    pub fn is_achieved(&self) -> bool {
        matches!(self, Outcome::Achieved)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StageTiming {
    pub enabled: Option<u64>,
    pub achieved: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LiftingMetrics {
    pub outcome: Option<Outcome>,
    pub ticks: u64,
    pub rounds: usize,
    pub engineer_reviews: u32,
    pub decisions: usize,
    pub stages_achieved: usize,
    pub stages: BTreeMap<String, StageTiming>,
    pub artifact_calls: BTreeMap<String, u32>,
    pub receipts: Vec<String>,
}

/// Builds a registry holding the in-process stubs.
pub fn stub_registry(reservoir: &ReservoirData, agency_faults: u32) -> Registry {
    let mut r = Registry::default();
    for name in STUB_NAMES {
        r.register_artifact(EntityDescriptor::artifact(name), stub(name, reservoir, agency_faults).unwrap())
            .expect("stub names are distinct");
    }
    r
}

type EnvLog = (String, Value);

/// Environment side of the agents' actions: artifact calls plus the
/// workflow's shared data (reservoir, model, proposals, decisions).
struct Env {
    registry: Registry,
    constraints: Constraints,
    report_attempts: u32,
    reservoir: Option<Value>,
    model: Option<Model>,
    proposals: Vec<OptimizationProposal>,
    decisions: Vec<ApprovalDecision>,
    pins: BTreeMap<String, f64>,
    applied: Option<Value>,
    receipts: Vec<String>,
    calls: BTreeMap<String, u32>,
    percepts: BTreeMap<String, Vec<BeliefChange>>,
    log: Vec<EnvLog>,
    desk: Option<DecisionDesk>,
}

fn fail(msg: impl Into<String>) -> ActionOutcome {
    ActionOutcome::Failed(msg.into())
}

impl Env {
    fn current(&self) -> Option<&OptimizationProposal> {
        self.proposals.last()
    }

    fn call(&mut self, artifact: &str, op: &str, payload: Value) -> Result<Value, MediationError> {
        *self.calls.entry(artifact.into()).or_default() += 1;
        let (call, res) = self.registry.invoke_artifact(artifact, op, payload);
        self.log.push(("artifact-call".into(), serde_json::to_value(&call).unwrap()));
        match res {
            Ok(r) => {
                self.log.push(("artifact-result".into(), serde_json::to_value(&r).unwrap()));
                Ok(r.payload)
            }
            Err(e) => {
                self.log.push((
                    "artifact-fault".into(),
                    json!({"correlation": call.correlation, "error": e.to_string(), "retryable": e.is_retryable()}),
                ));
                Err(e)
            }
        }
    }

    fn effective_constraints(&self) -> Constraints {
        let mut c = self.constraints.clone();
        for (k, v) in &self.pins {
            c.insert(k.clone(), [*v, *v]);
        }
        c
    }

    fn fetch_reservoir_data(&mut self) -> ActionOutcome {
        match self.call("process_info", "read_reservoir", json!({})) {
            Ok(v) => {
                self.reservoir = Some(v);
                ActionOutcome::Done
            }
            Err(e) => fail(e.to_string()),
        }
    }

    fn invoke_modeller(&mut self) -> ActionOutcome {
        let Some(data) = self.reservoir.clone() else {
            return fail("no reservoir data yet");
        };
        let v = match self.call("modeller", "build_model", data) {
            Ok(v) => v,
            Err(e) => return fail(e.to_string()),
        };
        match serde_json::from_value::<Model>(v) {
            Ok(m) => {
                self.model = Some(m);
                ActionOutcome::Done
            }
            Err(e) => fail(format!("malformed model: {e}")),
        }
    }

    fn invoke_optimizer(&mut self) -> ActionOutcome {
        let Some(model) = self.model.clone() else {
            return fail("no model yet");
        };
        let constraints = self.effective_constraints();
        let v = match self.call("optimizer", "optimise", json!({"model": model, "constraints": constraints})) {
            Ok(v) => v,
            Err(e) => return fail(e.to_string()),
        };
        let parameters: BTreeMap<String, f64> = match serde_json::from_value(v["parameters"].clone()) {
            Ok(p) => p,
            Err(e) => return fail(format!("malformed proposal: {e}")),
        };
        let round = self.proposals.len() as u32 + 1;
        let p = OptimizationProposal {
            id: format!("P-{round}"),
            round,
            model_ref: model.model_ref.clone(),
            parameters,
            objective_value: v["objective_value"].as_f64().unwrap_or(f64::NAN),
            constraints,
        };
        let board = self.percepts.entry("chatbot".into()).or_default();
        if let Some(old) = self.proposals.last() {
            board.push(BeliefChange::remove(proposal_belief(&old.id)));
        }
        board.push(BeliefChange::add(proposal_belief(&p.id)));
        if let Some(d) = &self.desk {
            d.announce(&p.id);
        }
        self.log.push(("proposal".into(), serde_json::to_value(&p).unwrap()));
        self.proposals.push(p);
        ActionOutcome::Done
    }

    fn present_proposal(&mut self, action: &Literal) -> ActionOutcome {
        let actor = action.args.first().and_then(Term::as_atom).and_then(Actor::parse);
        let id = action.args.get(1).and_then(Term::as_text);
        let (Some(actor), Some(id)) = (actor, id) else {
            return fail(format!("malformed {action}"));
        };
        match self.current() {
            Some(p) if p.id == id => {
                let payload = json!({"actor": actor, "proposal": p});
                self.log.push(("proposal-presented".into(), payload));
                ActionOutcome::Done
            }
            _ => fail(format!("{id} is not the current proposal")),
        }
    }

    fn apply_setup(&mut self) -> ActionOutcome {
        let Some(p) = self.current().cloned() else {
            return fail("nothing to apply");
        };
        if !gate_open(&self.decisions, &p.id) {
            self.log.push(("gate-closed".into(), json!({"proposal_id": p.id})));
            return fail(format!("{} lacks engineer and operator acceptance", p.id));
        }
        match self.call("control_system", "apply", json!({"proposal_id": p.id, "parameters": p.parameters})) {
            Ok(ack) => {
                let applied = json!({"proposal_id": p.id, "parameters": p.parameters, "ack": ack});
                self.log.push(("setup-applied".into(), applied.clone()));
                self.applied = Some(applied);
                ActionOutcome::Done
            }
            Err(e) => fail(e.to_string()),
        }
    }

    fn report_to_agency(&mut self) -> ActionOutcome {
        let Some(applied) = self.applied.clone() else {
            return fail("no applied setup to report");
        };
        let id = applied["proposal_id"].as_str().unwrap_or_default().to_string();
        let p = self.proposals.iter().find(|p| p.id == id).cloned();
        let approvals: Vec<&ApprovalDecision> = self.decisions.iter().filter(|d| d.proposal_id == id).collect();
        let well = self.model.as_ref().map(|m| m.well.clone()).unwrap_or_default();
        let report = json!({
            "well": well,
            "proposal_id": id,
            "model_ref": p.as_ref().map(|p| p.model_ref.clone()),
            "parameters": applied["parameters"],
            "objective_value": p.as_ref().map(|p| p.objective_value),
            "approvals": approvals,
        });
        let mut last = String::new();
        for attempt in 1..=self.report_attempts.max(1) {
            match self.call("agency", "report", report.clone()) {
                Ok(v) => {
                    let receipt = v["receipt"].as_str().unwrap_or_default().to_string();
                    self.log.push(("receipt".into(), json!({"receipt": receipt, "attempt": attempt})));
                    self.receipts.push(receipt);
                    return ActionOutcome::Done;
                }
                Err(e) if e.is_retryable() => last = e.to_string(),
                Err(e) => return fail(e.to_string()),
            }
        }
        fail(format!("agency unreachable after {} attempts: {last}", self.report_attempts))
    }
}

fn proposal_belief(id: &str) -> Literal {
    Literal::new("proposal", vec![Term::Str(id.into())])
}

impl Actuators for Env {
    fn act(&mut self, _agent: &str, action: &Literal, _now: u64) -> ActionOutcome {
        match (action.functor.as_str(), action.arity()) {
            ("fetch_reservoir_data", 0) => self.fetch_reservoir_data(),
            ("invoke_modeller", 0) => self.invoke_modeller(),
            ("invoke_optimizer", 0) => self.invoke_optimizer(),
            ("present_proposal", 2) => self.present_proposal(action),
            ("apply_setup", 0) => self.apply_setup(),
            ("report_to_agency", 0) => self.report_to_agency(),
            _ => ActionOutcome::Unknown,
        }
    }
}

#[derive(Debug, Clone)]
struct Pending {
    actor: Actor,
    goal: String,
    proposal_id: String,
    from: String,
    since: u64,
    announced: bool,
    reminded: bool,
}

/// Goal id mentioned first in a literal such as `goal(G, T)` or `decision(G, P, V)`.
fn goal_arg(l: &Literal) -> Option<String> {
    match l.functor.as_str() {
        "goal" | "achieved" | "failed" | "review" | "decision" => l.args.first()?.as_atom().map(str::to_string),
        _ => None,
    }
}

fn goal_in_event(event: &str) -> Option<String> {
    let body = event.trim_start_matches(['+', '-', '!']);
    goal_arg(&Literal::parse(body).ok()?)
}

fn task_term(task: &Literal) -> Term {
    if task.args.is_empty() {
        Term::atom(task.functor.clone())
    } else {
        Term::Struct(task.clone())
    }
}

/// One run of the lifting organisation: a coordinator owning the scheme
/// state, four plan-driven agents, and two human proxies, advanced in
/// lock-step ticks of one second.
pub struct Workflow {
    cfg: WorkflowConfig,
    scheme: GoalScheme,
    state: SchemeState,
    agents: Vec<Agent>,
    goal_of: Vec<BTreeMap<IntentionId, String>>,
    env: Env,
    bus: MessageBus,
    approver: Box<dyn Approver>,
    trace: TraceWriter,
    tick: u64,
    started: bool,
    pending: Vec<Pending>,
    last_decision: BTreeMap<String, ApprovalDecision>,
    forwarded_note: Option<String>,
    engineer_reviews: u32,
    aborted: Option<(String, String)>,
    failure: Option<(String, String)>,
    stages: BTreeMap<String, StageTiming>,
    outcome: Option<Outcome>,
}

impl std::fmt::Debug for Workflow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Workflow")
            .field("scheme", &self.scheme.name)
            .field("tick", &self.tick)
            .field("outcome", &self.outcome)
            .finish()
    }
}

impl Workflow {
    /// `agents` pairs each scheme role with the plan library of the agent
    /// playing it; the agent takes the role's name.
    pub fn new(
        cfg: WorkflowConfig,
        scheme: GoalScheme,
        agents: Vec<(String, PlanLibrary)>,
        mut registry: Registry,
        approver: Box<dyn Approver>,
    ) -> Result<Self, WorkflowError> {
        if cfg.max_rounds == 0 {
            return Err(WorkflowError::NoRounds);
        }
        for a in REQUIRED_ARTIFACTS {
            if registry.descriptor(EntityKind::Artifact, a).is_none() {
                return Err(WorkflowError::MissingArtifact(a.into()));
            }
        }
        let mut state = SchemeState::new(&scheme);
        for role in &scheme.roles {
            if !agents.iter().any(|(n, _)| n == role) {
                return Err(WorkflowError::MissingAgent(role.clone()));
            }
            commit(&scheme, &mut state, role, role)?;
        }
        let names = agents
            .iter()
            .map(|(n, _)| n.as_str())
            .chain([COORDINATOR, "engineer", "operator"]);
        for n in names {
            if registry.descriptor(EntityKind::Agent, n).is_none() {
                registry.register_entity(EntityDescriptor::agent(n))?;
            }
        }
        let env = Env {
            registry,
            constraints: cfg.constraints.clone(),
            report_attempts: cfg.report_attempts,
            reservoir: None,
            model: None,
            proposals: vec![],
            decisions: vec![],
            pins: BTreeMap::new(),
            applied: None,
            receipts: vec![],
            calls: BTreeMap::new(),
            percepts: BTreeMap::new(),
            log: vec![],
            desk: None,
        };
        let stages = scheme.goal(&scheme.root).unwrap()
            .children
            .iter()
            .map(|c| (c.clone(), StageTiming::default()))
            .collect();
        Ok(Self {
            goal_of: vec![BTreeMap::new(); agents.len()],
            agents: agents.into_iter().map(|(n, lib)| Agent::new(n, lib)).collect(),
            cfg,
            scheme,
            state,
            env,
            bus: MessageBus::default(),
            approver,
            trace: TraceWriter::new(1.0),
            tick: 0,
            started: false,
            pending: vec![],
            last_decision: BTreeMap::new(),
            forwarded_note: None,
            engineer_reviews: 0,
            aborted: None,
            failure: None,
            stages,
            outcome: None,
        })
    }

    /// Publishes proposal ids to `desk` so outside decisions can be checked.
    pub fn with_desk(mut self, desk: DecisionDesk) -> Self {
        self.env.desk = Some(desk);
        self
    }

    pub fn trace_mut(&mut self) -> &mut TraceWriter {
        &mut self.trace
    }

    pub fn trace(&self) -> &TraceWriter {
        &self.trace
    }

    pub fn into_trace(self) -> TraceWriter {
        self.trace
    }

    pub fn scheme(&self) -> &GoalScheme {
        &self.scheme
    }

    pub fn state(&self) -> &SchemeState {
        &self.state
    }

    pub fn proposals(&self) -> &[OptimizationProposal] {
        &self.env.proposals
    }

    pub fn decisions(&self) -> &[ApprovalDecision] {
        &self.env.decisions
    }

    pub fn current_tick(&self) -> u64 {
        self.tick
    }

    pub fn outcome(&self) -> Option<&Outcome> {
        self.outcome.as_ref()
    }

    pub fn is_finished(&self) -> bool {
        self.outcome.is_some()
    }

    /// Runs until the workflow ends or `max_ticks` passes.
    pub fn run(&mut self) -> &Outcome {
        while self.outcome.is_none() {
            self.step();
        }
        self.outcome.as_ref().unwrap()
    }

    fn emit_changes(&mut self, source: &str, changes: &[StatusChange]) {
        let k = self.tick;
        for c in changes {
            if let Some(t) = self.stages.get_mut(&c.goal) {
                match c.status {
                    GoalStatus::Enabled if t.enabled.is_none() => t.enabled = Some(k),
                    GoalStatus::Achieved => t.achieved = Some(k),
                    _ => {}
                }
            }
            self.trace
                .push(k, source, "goal-status", Some(&c.goal), json!({"status": c.status}));
        }
    }

    fn send(&mut self, from: &str, to: &str, performative: Performative, content: Literal) {
        let goal = goal_arg(&content);
        let k = self.tick;
        match self
            .bus
            .send_message(&self.env.registry, from, to, performative, content.clone(), k)
        {
            Ok(r) => self.trace.push(
                k,
                from,
                "routed",
                goal.as_deref(),
                json!({"id": r.id, "to": to, "performative": performative, "content": content, "deliver_at": r.deliver_at}),
            ),
            Err(e) => self.trace.push(
                k,
                from,
                "send-error",
                goal.as_deref(),
                json!({"to": to, "content": content, "error": e.to_string()}),
            ),
        }
    }

    fn start(&mut self) {
        self.started = true;
        let preorder: Vec<String> = self.scheme.preorder().iter().map(|g| g.id.clone()).collect();
        let stages: Vec<&String> = self.stages.keys().collect();
        self.trace.push(
            0,
            COORDINATOR,
            "scheme",
            None,
            json!({"name": self.scheme.name, "version": self.scheme.version(), "goals": preorder, "stages": stages}),
        );
        let commitments: Vec<(String, String)> =
            self.state.commitments.iter().map(|(r, a)| (r.clone(), a.clone())).collect();
        for (role, agent) in commitments {
            self.trace
                .push(0, COORDINATOR, "commit", None, json!({"role": role, "agent": agent}));
        }
        let initial: Vec<StatusChange> = self
            .scheme
            .preorder()
            .iter()
            .filter(|g| self.state.get(&g.id) != GoalStatus::Waiting)
            .map(|g| StatusChange {
                goal: g.id.clone(),
                status: self.state.get(&g.id),
            })
            .collect();
        self.emit_changes(COORDINATOR, &initial);
    }

    /// Advances one tick.
    pub fn step(&mut self) {
        if self.outcome.is_some() {
            return;
        }
        if !self.started {
            self.start();
        }
        if let Some(d) = &self.env.desk {
            d.set_now(self.tick);
        }
        self.coordinate();
        for i in 0..self.agents.len() {
            self.run_agent(i);
        }
        self.run_humans();
        self.settle();
        self.tick += 1;
    }

    fn coordinate(&mut self) {
        let k = self.tick;
        for m in self.bus.deliver(COORDINATOR, k) {
            let Some(goal) = goal_arg(&m.content) else {
                self.trace.push(k, COORDINATOR, "ignored", None, json!({"content": m.content}));
                continue;
            };
            let to = match m.content.functor.as_str() {
                "achieved" => GoalStatus::Achieved,
                "failed" => GoalStatus::Failed,
                _ => continue,
            };
            match mark(&self.scheme, &mut self.state, &goal, to) {
                Ok(changes) => self.emit_changes(COORDINATOR, &changes),
                Err(e) => {
                    self.trace
                        .push(k, COORDINATOR, "rejected", Some(&goal), json!({"error": e.to_string()}));
                    continue;
                }
            }
            if to == GoalStatus::Failed {
                self.revise(&goal);
            }
        }
        if self.state.is_finished(&self.scheme) {
            return;
        }
        for (goal, agent) in executable_goals(&self.scheme, &self.state) {
            let changes = mark(&self.scheme, &mut self.state, &goal, GoalStatus::InProgress)
                .expect("executable goals are enabled");
            self.emit_changes(COORDINATOR, &changes);
            self.last_decision.remove(&goal);
            let task = task_term(&self.scheme.goal(&goal).unwrap().task);
            let content = Literal::new("goal", vec![Term::atom(goal.clone()), task]);
            self.send(COORDINATOR, &agent, Performative::Achieve, content);
        }
    }

    /// After `goal` failed: a contested review reopens part of the scheme
    /// while review budget remains; anything else is final.
    fn revise(&mut self, goal: &str) {
        let k = self.tick;
        let Some(d) = self.last_decision.get(goal).cloned().filter(|d| d.verdict == Verdict::Contest) else {
            self.failure = Some((goal.into(), "goal failed".into()));
            return;
        };
        if self.engineer_reviews >= self.cfg.max_rounds {
            let reason = format!("review budget of {} rounds exhausted", self.cfg.max_rounds);
            self.trace.push(
                k,
                COORDINATOR,
                "revision-exhausted",
                Some(goal),
                json!({"engineer_reviews": self.engineer_reviews, "max_rounds": self.cfg.max_rounds}),
            );
            self.failure = Some((goal.into(), reason));
            return;
        }
        let target = match d.actor {
            Actor::Engineer => self
                .scheme
                .preorder()
                .into_iter()
                .find(|g| g.is_leaf() && g.task.functor == "optimise")
                .map(|g| g.id.clone()),
            Actor::Operator => {
                let parent = self.scheme.goal(goal).unwrap().parent.clone();
                parent.and_then(|p| {
                    self.scheme.goal(&p).unwrap().children.iter().find(|c| is_review_of(&self.scheme, c, Actor::Engineer)).cloned()
                })
            }
        };
        let Some(target) = target else {
            self.failure = Some((goal.into(), format!("no goal to revise after a {} contest", d.actor)));
            return;
        };
        let changes = reopen(&self.scheme, &mut self.state, &target).expect("target is a scheme goal");
        self.trace.push(
            k,
            COORDINATOR,
            "revision",
            Some(goal),
            json!({"by": d.actor, "proposal_id": d.proposal_id, "reopen": target, "adjustments": d.adjustments, "note": d.note}),
        );
        self.emit_changes(COORDINATOR, &changes);
    }

    fn run_agent(&mut self, i: usize) {
        let k = self.tick;
        let name = self.agents[i].name().to_string();
        let inbox = self.bus.deliver(&name, k);
        let percepts = self.env.percepts.remove(&name).unwrap_or_default();
        if inbox.is_empty() && percepts.is_empty() && self.agents[i].is_idle() {
            return;
        }
        self.env.log.clear();
        let rep = self.agents[i].reasoning_cycle(&percepts, &inbox, k, &mut self.env);
        let mut env_log: VecDeque<EnvLog> = self.env.log.drain(..).collect();
        for r in &rep.records {
            let mut v = serde_json::to_value(r).unwrap();
            let kind = v["kind"].as_str().unwrap_or("record").to_string();
            if let Some(o) = v.as_object_mut() {
                o.remove("kind");
            }
            let map = &mut self.goal_of[i];
            let goal = match r {
                AgentRecord::PlanSelected { event, intention, .. } => {
                    let g = goal_in_event(event);
                    if let Some(g) = &g {
                        map.insert(*intention, g.clone());
                    }
                    g
                }
                AgentRecord::Event { event, .. } | AgentRecord::Unhandled { event } => goal_in_event(event),
                AgentRecord::Message { content, .. } | AgentRecord::Sent { content, .. } => goal_in_event(content),
                _ => v["intention"].as_u64().and_then(|id| map.get(&id).cloned()),
            };
            self.trace.push(k, &name, &kind, goal.as_deref(), v);
            if matches!(r, AgentRecord::Action { .. } | AgentRecord::StepFailed { .. }) {
                for (kind, payload) in env_log.drain(..) {
                    self.trace.push(k, &name, &kind, goal.as_deref(), payload);
                }
            }
            if let AgentRecord::IntentionDone { intention, .. } | AgentRecord::IntentionFailed { intention, .. } = r {
                map.remove(intention);
            }
        }
        for (kind, payload) in env_log {
            self.trace.push(k, &name, &kind, None, payload);
        }
        for m in rep.outbox {
            self.send(&name, &m.to, m.performative, m.content);
        }
    }

    fn run_humans(&mut self) {
        let k = self.tick;
        for actor in Actor::ALL {
            for m in self.bus.deliver(actor.name(), k) {
                let c = &m.content;
                let goal = c.args.first().and_then(Term::as_atom);
                let pid = c.args.get(1).and_then(Term::as_text);
                match (c.functor.as_str(), goal, pid) {
                    ("review", Some(g), Some(p)) => self.pending.push(Pending {
                        actor,
                        goal: g.into(),
                        proposal_id: p.into(),
                        from: m.from.clone(),
                        since: k,
                        announced: false,
                        reminded: false,
                    }),
                    _ => self
                        .trace
                        .push(k, actor.name(), "ignored", None, json!({"content": m.content})),
                }
            }
        }
        let pending = std::mem::take(&mut self.pending);
        for mut p in pending {
            if self.aborted.is_some() {
                break;
            }
            let Some(proposal) = self.env.proposals.iter().find(|x| x.id == p.proposal_id).cloned() else {
                self.trace
                    .push(k, p.actor.name(), "ignored", Some(&p.goal), json!({"unknown_proposal": p.proposal_id}));
                continue;
            };
            let req = ReviewRequest {
                actor: p.actor,
                goal: p.goal.clone(),
                proposal,
                note: (p.actor == Actor::Engineer).then(|| self.forwarded_note.clone()).flatten(),
            };
            match self.approver.decide(&req) {
                Some(mut d) => {
                    d.actor = p.actor;
                    d.proposal_id = p.proposal_id.clone();
                    if let Err(e) = d.validate() {
                        self.trace
                            .push(k, p.actor.name(), "decision-rejected", Some(&p.goal), json!({"error": e.to_string()}));
                        self.pending.push(p);
                        continue;
                    }
                    self.record_decision(&p, d);
                }
                None => {
                    if !p.announced {
                        p.announced = true;
                        self.trace.push(k, p.actor.name(), "review-pending", Some(&p.goal), &req);
                    }
                    let waited = k - p.since;
                    if let Some(w) = self.cfg.reminder_after {
                        if waited >= w && !p.reminded {
                            p.reminded = true;
                            self.trace.push(
                                k,
                                p.actor.name(),
                                "reminder",
                                Some(&p.goal),
                                json!({"proposal_id": p.proposal_id, "waited": waited}),
                            );
                        }
                    }
                    if self.cfg.abort_after.is_some_and(|a| waited >= a) {
                        self.abort(&p, waited);
                        continue;
                    }
                    self.pending.push(p);
                }
            }
        }
    }

    fn record_decision(&mut self, p: &Pending, d: ApprovalDecision) {
        let k = self.tick;
        self.trace.push(k, p.actor.name(), "decision", Some(&p.goal), &d);
        match (d.actor, d.verdict) {
            (Actor::Engineer, v) => {
                self.engineer_reviews += 1;
                self.forwarded_note = None;
                if v == Verdict::Contest {
                    self.env.pins.extend(d.adjustments.clone());
                }
            }
            (Actor::Operator, Verdict::Contest) => self.forwarded_note = Some(d.note.clone()),
            _ => {}
        }
        self.env.decisions.push(d.clone());
        self.last_decision.insert(p.goal.clone(), d.clone());
        let content = Literal::new(
            "decision",
            vec![
                Term::atom(p.goal.clone()),
                Term::Str(d.proposal_id.clone()),
                Term::atom(d.verdict.name()),
            ],
        );
        self.send(p.actor.name(), &p.from, Performative::Tell, content);
    }

    fn abort(&mut self, p: &Pending, waited: u64) {
        let k = self.tick;
        let reason = format!("no answer from the {} after {waited} ticks", p.actor);
        self.trace
            .push(k, p.actor.name(), "abort", Some(&p.goal), json!({"proposal_id": p.proposal_id, "reason": reason}));
        if let Ok(changes) = mark(&self.scheme, &mut self.state, &p.goal, GoalStatus::Failed) {
            self.emit_changes(COORDINATOR, &changes);
        }
        self.aborted = Some((p.goal.clone(), reason));
    }

    /// Ends the run once the scheme is closed and nothing is in flight.
    fn settle(&mut self) {
        let k = self.tick;
        let quiet = self.bus.is_empty() && self.agents.iter().all(Agent::is_idle);
        let outcome = if let Some((goal, reason)) = self.aborted.clone() {
            Some(Outcome::Aborted { goal, reason })
        } else if self.state.is_finished(&self.scheme) && quiet {
            Some(match self.state.get(&self.scheme.root) {
                GoalStatus::Achieved => Outcome::Achieved,
                _ => {
                    let (goal, reason) = self.failure.clone().unzip();
                    Outcome::Failed {
                        goal,
                        reason: reason.unwrap_or_else(|| "goal failed".into()),
                    }
                }
            })
        } else if k + 1 >= self.cfg.max_ticks {
            Some(Outcome::Stalled { ticks: k + 1 })
        } else {
            None
        };
        if let Some(o) = outcome {
            self.trace.push(k, COORDINATOR, "workflow-end", None, json!({"result": o, "metrics": self.metrics_inner()}));
            self.outcome = Some(o);
        }
    }

    fn metrics_inner(&self) -> Value {
        json!({
            "rounds": self.env.proposals.len(),
            "engineer_reviews": self.engineer_reviews,
            "decisions": self.env.decisions.len(),
            "stages_achieved": self.stages_achieved(),
            "stages": self.stages,
            "artifact_calls": self.env.calls,
            "receipts": self.env.receipts,
        })
    }

    fn stages_achieved(&self) -> usize {
        self.scheme.goal(&self.scheme.root).unwrap()
            .children
            .iter()
            .filter(|c| self.state.get(c) == GoalStatus::Achieved)
            .count()
    }

    pub fn metrics(&self) -> LiftingMetrics {
        LiftingMetrics {
            outcome: self.outcome.clone(),
            ticks: self.tick,
            rounds: self.env.proposals.len(),
            engineer_reviews: self.engineer_reviews,
            decisions: self.env.decisions.len(),
            stages_achieved: self.stages_achieved(),
            stages: self.stages.clone(),
            artifact_calls: self.env.calls.clone(),
            receipts: self.env.receipts.clone(),
        }
    }

    /// Everything a console needs to draw the current state.
    pub fn snapshot(&self) -> Value {
        let goals: Vec<Value> = self
            .scheme
            .preorder()
            .iter()
            .map(|g| json!({"goal": g.id, "status": self.state.get(&g.id), "role": g.role, "description": g.description}))
            .collect();
        let pending: Vec<Value> = self
            .pending
            .iter()
            .map(|p| json!({"actor": p.actor, "goal": p.goal, "proposal_id": p.proposal_id, "since_tick": p.since}))
            .collect();
        json!({
            "tick": self.tick,
            "scheme": {"name": self.scheme.name, "version": self.scheme.version()},
            "goals": goals,
            "proposals": self.env.proposals,
            "decisions": self.env.decisions,
            "pending": pending,
            "applied": self.env.applied,
            "receipts": self.env.receipts,
            "outcome": self.outcome,
        })
    }
}

fn is_review_of(scheme: &GoalScheme, id: &str, actor: Actor) -> bool {
    let t = &scheme.goal(id).unwrap().task;
    t.functor == "review" && t.args.first().and_then(Term::as_atom) == Some(actor.name())
}
