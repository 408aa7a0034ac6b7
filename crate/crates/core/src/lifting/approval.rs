use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mediation::{Constraints, PARAMETERS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actor {
    Engineer,
    Operator,
}

impl Actor {
    pub const ALL: [Actor; 2] = [Actor::Engineer, Actor::Operator];

    pub fn name(self) -> &'static str {
        match self {
            Actor::Engineer => "engineer",
            Actor::Operator => "operator",
        }
    }

    pub fn parse(s: &str) -> Option<Actor> {
        Actor::ALL.into_iter().find(|a| a.name() == s)
    }
}

impl fmt::Display for Actor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Contest,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Accept => "accept",
            Verdict::Contest => "contest",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationProposal {
    pub id: String,
    pub round: u32,
    pub model_ref: String,
    pub parameters: BTreeMap<String, f64>,
    pub objective_value: f64,
    pub constraints: Constraints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApprovalDecision {
    pub proposal_id: String,
    pub actor: Actor,
    pub verdict: Verdict,
    #[serde(default)]
    pub adjustments: BTreeMap<String, f64>,
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecisionError {
    #[error("a contest needs an adjustment or a note")]
    EmptyContest,
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("adjustment for `{0}` is not a finite number")]
    NotFinite(String),
}

impl ApprovalDecision {
    pub fn accept(proposal_id: &str, actor: Actor) -> Self {
        Self {
            proposal_id: proposal_id.into(),
            actor,
            verdict: Verdict::Accept,
            adjustments: BTreeMap::new(),
            note: String::new(),
        }
    }

    pub fn validate(&self) -> Result<(), DecisionError> {
        for (k, v) in &self.adjustments {
            if !PARAMETERS.contains(&k.as_str()) {
                return Err(DecisionError::UnknownParameter(k.clone()));
            }
            if !v.is_finite() {
                return Err(DecisionError::NotFinite(k.clone()));
            }
        }
        if self.verdict == Verdict::Contest && self.adjustments.is_empty() && self.note.trim().is_empty() {
            return Err(DecisionError::EmptyContest);
        }
        Ok(())
    }
}

/// What a human proxy is asked to look at.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReviewRequest {
    pub actor: Actor,
    pub goal: String,
    pub proposal: OptimizationProposal,
    /// Note sent back by the operator with an earlier contest, if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Stand-in for a human. `None` means no answer yet.
pub trait Approver: Send {
    fn decide(&mut self, req: &ReviewRequest) -> Option<ApprovalDecision>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedDecision {
    pub verdict: Verdict,
    #[serde(default)]
    pub adjust: BTreeMap<String, f64>,
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorPolicy {
    #[serde(default)]
    pub script: Vec<ScriptedDecision>,
    #[serde(default = "accept")]
    pub otherwise: Verdict,
}

fn accept() -> Verdict {
    Verdict::Accept
}

impl Default for ActorPolicy {
    fn default() -> Self {
        Self {
            script: vec![],
            otherwise: Verdict::Accept,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApprovalPolicy {
    #[serde(default)]
    pub engineer: ActorPolicy,
    #[serde(default)]
    pub operator: ActorPolicy,
}

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error("{actor} script entry {index}: {source}")]
    Entry {
        actor: Actor,
        index: usize,
        source: DecisionError,
    },
}

impl ApprovalPolicy {
    pub fn from_toml(src: &str) -> Result<Self, PolicyError> {
        let p: ApprovalPolicy = toml::from_str(src)?;
        for actor in Actor::ALL {
            for (index, s) in p.for_actor(actor).script.iter().enumerate() {
                let d = scripted(s, "", actor);
                d.validate().map_err(|source| PolicyError::Entry { actor, index, source })?;
            }
        }
        Ok(p)
    }

    pub fn for_actor(&self, a: Actor) -> &ActorPolicy {
        match a {
            Actor::Engineer => &self.engineer,
            Actor::Operator => &self.operator,
        }
    }
}

fn scripted(s: &ScriptedDecision, proposal_id: &str, actor: Actor) -> ApprovalDecision {
    ApprovalDecision {
        proposal_id: proposal_id.into(),
        actor,
        verdict: s.verdict,
        adjustments: s.adjust.clone(),
        note: s.note.clone(),
    }
}

/// Replays a fixed script per actor, then answers `otherwise` forever.
#[derive(Debug, Clone)]
pub struct ScriptedApprover {
    policy: ApprovalPolicy,
    used: BTreeMap<Actor, usize>,
}

impl ScriptedApprover {
    pub fn new(policy: ApprovalPolicy) -> Self {
        Self {
            policy,
            used: BTreeMap::new(),
        }
    }
}

impl Approver for ScriptedApprover {
    fn decide(&mut self, req: &ReviewRequest) -> Option<ApprovalDecision> {
        let p = self.policy.for_actor(req.actor);
        let n = self.used.entry(req.actor).or_default();
        let d = match p.script.get(*n) {
            Some(s) => scripted(s, &req.proposal.id, req.actor),
            None => ApprovalDecision {
                proposal_id: req.proposal.id.clone(),
                actor: req.actor,
                verdict: p.otherwise,
                adjustments: BTreeMap::new(),
                note: match p.otherwise {
                    Verdict::Contest => "contested by policy".into(),
                    Verdict::Accept => String::new(),
                },
            },
        };
        *n += 1;
        Some(d)
    }
}

/// Seeded coin flips. Engineer contests pin one parameter inside its box.
#[derive(Debug, Clone)]
pub struct RandomApprover {
    rng: ChaCha8Rng,
    pub contest_probability: f64,
}

impl RandomApprover {
    pub fn new(seed: u64, contest_probability: f64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            contest_probability,
        }
    }
}

impl Approver for RandomApprover {
    fn decide(&mut self, req: &ReviewRequest) -> Option<ApprovalDecision> {
        let mut d = ApprovalDecision::accept(&req.proposal.id, req.actor);
        if self.rng.random::<f64>() >= self.contest_probability {
            return Some(d);
        }
        d.verdict = Verdict::Contest;
        d.note = format!("random {} contest", req.actor);
        if req.actor == Actor::Engineer {
            let name = PARAMETERS[self.rng.random_range(0..PARAMETERS.len())];
            if let Some(&[lo, hi]) = req.proposal.constraints.get(name) {
                let v = lo + (hi - lo) * self.rng.random::<f64>();
                d.adjustments.insert(name.into(), (v * 2.0).round() / 2.0);
            }
        }
        Some(d)
    }
}

/// A review waiting for a human answer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PendingReview {
    #[serde(flatten)]
    pub request: ReviewRequest,
    pub since_tick: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SubmitError {
    #[error("no such proposal `{0}`")]
    NotFound(String),
    #[error("proposal `{0}` is not awaiting a {1} decision")]
    Stale(String, Actor),
    #[error(transparent)]
    Invalid(#[from] DecisionError),
}

#[derive(Debug, Default)]
struct Desk {
    pending: BTreeMap<Actor, PendingReview>,
    known: Vec<String>,
    answers: VecDeque<ApprovalDecision>,
    now: u64,
}

/// Shared mailbox between a running workflow and people answering from
/// outside (HTTP, a terminal). Cloning shares the same desk.
#[derive(Debug, Clone, Default)]
pub struct DecisionDesk {
    inner: Arc<Mutex<Desk>>,
}

impl DecisionDesk {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Desk> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn pending(&self) -> Vec<PendingReview> {
        self.lock().pending.values().cloned().collect()
    }

    /// Accepts a decision for a pending review. Unknown ids and ids that are
    /// not (or no longer) awaiting this actor are rejected.
    pub fn submit(&self, d: ApprovalDecision) -> Result<(), SubmitError> {
        d.validate()?;
        let mut desk = self.lock();
        if !desk.known.contains(&d.proposal_id) {
            return Err(SubmitError::NotFound(d.proposal_id));
        }
        let waiting = desk
            .pending
            .get(&d.actor)
            .is_some_and(|p| p.request.proposal.id == d.proposal_id);
        let queued = desk.answers.iter().any(|a| a.actor == d.actor);
        if !waiting || queued {
            return Err(SubmitError::Stale(d.proposal_id, d.actor));
        }
        desk.answers.push_back(d);
        Ok(())
    }

    /// Called by the workflow when it publishes a proposal.
    pub fn announce(&self, proposal_id: &str) {
        let mut desk = self.lock();
        if !desk.known.iter().any(|k| k == proposal_id) {
            desk.known.push(proposal_id.into());
        }
    }

    pub fn set_now(&self, tick: u64) {
        self.lock().now = tick;
    }
}

/// Approver fed by a [`DecisionDesk`].
#[derive(Debug, Clone)]
pub struct InteractiveApprover {
    desk: DecisionDesk,
}

impl InteractiveApprover {
    pub fn new(desk: DecisionDesk) -> Self {
        Self { desk }
    }
}

impl Approver for InteractiveApprover {
    fn decide(&mut self, req: &ReviewRequest) -> Option<ApprovalDecision> {
        let mut desk = self.desk.lock();
        let now = desk.now;
        let fresh = desk
            .pending
            .get(&req.actor)
            .is_none_or(|p| p.request.proposal.id != req.proposal.id || p.request.goal != req.goal);
        if fresh {
            desk.pending.insert(
                req.actor,
                PendingReview {
                    request: req.clone(),
                    since_tick: now,
                },
            );
        }
        let at = desk
            .answers
            .iter()
            .position(|a| a.actor == req.actor && a.proposal_id == req.proposal.id)?;
        let d = desk.answers.remove(at);
        desk.pending.remove(&req.actor);
        d
    }
}

/// How one pass through the human gate ends.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ProtocolOutcome {
    /// Both humans accepted; the setup may be applied.
    Apply,
    /// The engineer contested; these adjustments go to the optimiser.
    Reoptimise { adjustments: BTreeMap<String, f64>, note: String },
    /// The operator contested; the engineer reviews again with this note.
    BackToEngineer { note: String },
    /// Somebody has not answered.
    Waiting,
}

/// Reference model of the human gate for one proposal: the engineer
/// decides first and the operator only sees what the engineer accepted.
pub fn approval_protocol(
    proposal: &OptimizationProposal,
    approver: &mut dyn Approver,
) -> (Vec<ApprovalDecision>, ProtocolOutcome) {
    let mut log = vec![];
    let mut req = ReviewRequest {
        actor: Actor::Engineer,
        goal: "engineer_review".into(),
        proposal: proposal.clone(),
        note: None,
    };
    let Some(e) = approver.decide(&req) else {
        return (log, ProtocolOutcome::Waiting);
    };
    log.push(e.clone());
    if e.verdict == Verdict::Contest {
        return (
            log,
            ProtocolOutcome::Reoptimise {
                adjustments: e.adjustments,
                note: e.note,
            },
        );
    }
    req.actor = Actor::Operator;
    req.goal = "operator_confirmation".into();
    let Some(o) = approver.decide(&req) else {
        return (log, ProtocolOutcome::Waiting);
    };
    log.push(o.clone());
    match o.verdict {
        Verdict::Accept => (log, ProtocolOutcome::Apply),
        Verdict::Contest => (log, ProtocolOutcome::BackToEngineer { note: o.note }),
    }
}

/// Whether the decision log authorises applying `proposal_id`: an engineer
/// accept followed by an operator accept, with no contest since.
pub fn gate_open(decisions: &[ApprovalDecision], proposal_id: &str) -> bool {
    let (mut eng, mut op) = (false, false);
    for d in decisions.iter().filter(|d| d.proposal_id == proposal_id) {
        match (d.actor, d.verdict) {
            (_, Verdict::Contest) => (eng, op) = (false, false),
            (Actor::Engineer, Verdict::Accept) => eng = true,
            (Actor::Operator, Verdict::Accept) => op = op || eng,
        }
    }
    eng && op
}
