//! The reasoning cycle.
//!
//! Each call to [`Agent::reasoning_cycle`] performs, in order:
//! 1. deliver timers whose `fire_at` is at or before `now`;
//! 2. apply the percept delta and inbound messages, producing events;
//! 3. dequeue one event (override lane first) and select a plan for it;
//! 4. execute exactly one step of one runnable intention.
//!
//! An intention created in phase 3 gets the step in phase 4, so a reaction
//! lands in the same tick as its event. While any protected (override)
//! intention exists only protected intentions are runnable.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::term::{Bindings, Literal};

use super::belief::BeliefBase;
use super::event::{Event, EventQueue, Polarity, Priority};
use super::plan::{select_plan_excluding, Performative, PlanLibrary, Step, Trigger};

pub type IntentionId = u64;
pub type TimerId = u64;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AgentError {
    #[error("belief {0} is not ground")]
    NonGround(String),
    #[error("negative timer delay {0}")]
    NegativeDelay(i64),
}

/// One sensed belief change.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BeliefChange {
    pub polarity: Polarity,
    pub belief: Literal,
}

impl BeliefChange {
    pub fn add(belief: Literal) -> Self {
        Self {
            polarity: Polarity::Added,
            belief,
        }
    }

    pub fn remove(belief: Literal) -> Self {
        Self {
            polarity: Polarity::Removed,
            belief,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Message {
    pub from: String,
    pub to: String,
    pub performative: Performative,
    pub content: Literal,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ActionOutcome {
    Done,
    Failed(String),
    /// No actuator is registered under the action's name.
    Unknown,
}

/// The environment side of action execution.
pub trait Actuators {
    fn act(&mut self, agent: &str, action: &Literal, now: u64) -> ActionOutcome;
}

/// Accepts every action; useful for unit tests and dry runs.
pub struct AcceptAll;

impl Actuators for AcceptAll {
    fn act(&mut self, _: &str, _: &Literal, _: u64) -> ActionOutcome {
        ActionOutcome::Done
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timer {
    pub id: TimerId,
    pub fire_at: u64,
    pub payload: Event,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CancelOutcome {
    Cancelled,
    AlreadyFired,
    Unknown,
}

#[derive(Debug, Clone)]
struct Frame {
    plan_index: usize,
    bindings: Bindings,
    pc: usize,
    event: Event,
    tried: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Intention {
    pub id: IntentionId,
    pub protected: bool,
    pub created_at: u64,
    stack: Vec<Frame>,
}

impl Intention {
    pub fn depth(&self) -> usize {
        self.stack.len()
    }

    /// Label of the bottom plan, i.e. the plan that created the intention.
    pub fn root_plan(&self) -> usize {
        self.stack[0].plan_index
    }
}

/// Internal happenings reported by a cycle, in the order they occurred.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AgentRecord {
    TimerFired { timer: TimerId, event: String },
    Percept { change: String },
    Message { from: String, performative: Performative, content: String },
    Event { event: String, priority: Priority },
    PlanSelected { event: String, plan: String, intention: IntentionId, protected: bool },
    Unhandled { event: String },
    IntentionsDropped { by: Option<IntentionId>, dropped: Vec<IntentionId> },
    Step { intention: IntentionId, protected: bool, plan: String, step: String },
    Action { intention: IntentionId, action: String },
    StepFailed { intention: IntentionId, step: String, reason: String },
    PlanRetry { intention: IntentionId, event: String, plan: String },
    IntentionDone { intention: IntentionId, plan: String },
    IntentionFailed { intention: IntentionId, event: String },
    TimerScheduled { timer: TimerId, fire_at: u64, event: String },
    TimerCancel { timer: TimerId, outcome: CancelOutcome },
    Sent { to: String, performative: Performative, content: String },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CycleReport {
    pub actions: Vec<Literal>,
    pub outbox: Vec<Message>,
    pub records: Vec<AgentRecord>,
}

#[derive(Debug, Clone)]
pub struct Agent {
    name: String,
    library: PlanLibrary,
    beliefs: BeliefBase,
    queue: EventQueue,
    intentions: Vec<Intention>,
    timers: BTreeMap<TimerId, Timer>,
    next_intention: IntentionId,
    next_timer: TimerId,
    last_run: Option<IntentionId>,
}

impl Agent {
    /// Builds an agent from its library. Initial beliefs are installed silently;
    /// initial goals are queued as achievement events.
    pub fn new(name: impl Into<String>, library: PlanLibrary) -> Self {
        let mut beliefs = BeliefBase::default();
        for b in &library.initial_beliefs {
            beliefs.insert(b.clone());
        }
        let mut queue = EventQueue::default();
        for g in &library.initial_goals {
            queue.push(Event::achieve(g.clone(), 0));
        }
        Self {
            name: name.into(),
            library,
            beliefs,
            queue,
            intentions: Vec::new(),
            timers: BTreeMap::new(),
            next_intention: 1,
            next_timer: 1,
            last_run: None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn library(&self) -> &PlanLibrary {
        &self.library
    }

    pub fn beliefs(&self) -> &BeliefBase {
        &self.beliefs
    }

    pub fn intentions(&self) -> &[Intention] {
        &self.intentions
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    pub fn pending_timers(&self) -> impl Iterator<Item = &Timer> {
        self.timers.values()
    }

    /// No queued events, intentions or timers.
    pub fn is_idle(&self) -> bool {
        self.queue.is_empty() && self.intentions.is_empty() && self.timers.is_empty()
    }

    fn prioritise(&self, mut e: Event) -> Event {
        if self.library.is_override(&e.content, e.polarity) {
            e.priority = Priority::Override;
        }
        e
    }

    /// Inserts a belief; emits and queues an added-event iff it was absent.
    pub fn add_belief(&mut self, belief: Literal, now: u64) -> Result<Option<Event>, AgentError> {
        if !belief.is_ground() {
            return Err(AgentError::NonGround(belief.to_string()));
        }
        if !self.beliefs.insert(belief.clone()) {
            return Ok(None);
        }
        let e = self.prioritise(Event::belief(Polarity::Added, belief, now));
        self.queue.push(e.clone());
        Ok(Some(e))
    }

    /// Removes a belief; emits and queues a removed-event iff it was present.
    pub fn remove_belief(&mut self, belief: &Literal, now: u64) -> Option<Event> {
        let removed = if belief.is_ground() {
            self.beliefs.remove(belief).then(|| belief.clone())
        } else {
            self.beliefs.remove_matching(belief)
        }?;
        let e = self.prioritise(Event::belief(Polarity::Removed, removed, now));
        self.queue.push(e.clone());
        Some(e)
    }

    /// Registers a timer delivering `payload` at the first cycle with clock >= now + delay.
    /// A timer scheduled during a cycle never fires in that same cycle.
    pub fn schedule_at(&mut self, delay_ticks: i64, payload: Event, now: u64) -> Result<TimerId, AgentError> {
        if delay_ticks < 0 {
            return Err(AgentError::NegativeDelay(delay_ticks));
        }
        let id = self.next_timer;
        self.next_timer += 1;
        self.timers.insert(
            id,
            Timer {
                id,
                fire_at: now + delay_ticks as u64,
                payload,
            },
        );
        Ok(id)
    }

    pub fn cancel_timer(&mut self, id: TimerId) -> CancelOutcome {
        if self.timers.remove(&id).is_some() {
            CancelOutcome::Cancelled
        } else if id > 0 && id < self.next_timer {
            CancelOutcome::AlreadyFired
        } else {
            CancelOutcome::Unknown
        }
    }

    /// Queues an achievement goal from outside the agent.
    pub fn post_goal(&mut self, goal: Literal, now: u64) {
        let e = self.prioritise(Event::achieve(goal, now));
        self.queue.push(e);
    }

    pub fn reasoning_cycle(
        &mut self,
        percepts: &[BeliefChange],
        inbox: &[Message],
        now: u64,
        actuators: &mut dyn Actuators,
    ) -> CycleReport {
        let mut rep = CycleReport::default();

        // 1. timers
        let due: Vec<TimerId> = self
            .timers
            .values()
            .filter(|t| t.fire_at <= now)
            .map(|t| t.id)
            .collect();
        let mut due_timers: Vec<Timer> = due.iter().filter_map(|id| self.timers.remove(id)).collect();
        due_timers.sort_by_key(|t| (t.fire_at, t.id));
        for t in due_timers {
            let mut e = t.payload;
            e.timestamp = now;
            let e = self.prioritise(e);
            rep.records.push(AgentRecord::TimerFired {
                timer: t.id,
                event: e.to_string(),
            });
            self.queue.push(e);
        }

        // 2. percepts and messages
        for p in percepts {
            let emitted = match p.polarity {
                Polarity::Added => self.add_belief(p.belief.clone(), now).ok().flatten(),
                Polarity::Removed => self.remove_belief(&p.belief, now),
            };
            if let Some(e) = emitted {
                rep.records.push(AgentRecord::Percept { change: e.to_string() });
            }
        }
        for m in inbox {
            rep.records.push(AgentRecord::Message {
                from: m.from.clone(),
                performative: m.performative,
                content: m.content.to_string(),
            });
            match m.performative {
                Performative::Tell | Performative::Reply => {
                    let _ = self.add_belief(m.content.clone(), now);
                }
                Performative::Achieve => self.post_goal(m.content.clone(), now),
            }
        }

        // 3. one event
        let mut fresh = None;
        if let Some(event) = self.queue.pop() {
            rep.records.push(AgentRecord::Event {
                event: event.to_string(),
                priority: event.priority,
            });
            fresh = self.select_for(event, now, &mut rep);
        }

        // 4. one step
        let chosen = match fresh {
            Some(id) if self.is_runnable(id) => Some(id),
            _ => self.next_runnable(),
        };
        if let Some(id) = chosen {
            self.last_run = Some(id);
            self.run_step(id, now, actuators, &mut rep);
        }
        rep
    }

    fn select_for(&mut self, event: Event, now: u64, rep: &mut CycleReport) -> Option<IntentionId> {
        let Some(inst) = select_plan_excluding(&event, &self.beliefs, &self.library, &[]) else {
            rep.records.push(AgentRecord::Unhandled { event: event.to_string() });
            return None;
        };
        let plan = &self.library.plans[inst.plan_index];
        let protected = event.priority == Priority::Override;
        let id = self.next_intention;
        self.next_intention += 1;
        rep.records.push(AgentRecord::PlanSelected {
            event: event.to_string(),
            plan: plan.name(),
            intention: id,
            protected,
        });
        let body_len = plan.body.len();
        let plan_name = plan.name();
        let drops_first = plan.body.first() == Some(&Step::DropAllIntentions);
        let mut pc = 0;
        if protected && drops_first {
            let dropped = self.drop_unprotected();
            rep.records.push(AgentRecord::IntentionsDropped { by: Some(id), dropped });
            pc = 1;
        }
        let frame = Frame {
            plan_index: inst.plan_index,
            bindings: inst.bindings,
            pc,
            tried: vec![inst.plan_index],
            event,
        };
        if pc >= body_len {
            rep.records.push(AgentRecord::IntentionDone {
                intention: id,
                plan: plan_name,
            });
            return None;
        }
        self.intentions.push(Intention {
            id,
            protected,
            created_at: now,
            stack: vec![frame],
        });
        Some(id)
    }

    fn drop_unprotected(&mut self) -> Vec<IntentionId> {
        let dropped: Vec<IntentionId> = self
            .intentions
            .iter()
            .filter(|i| !i.protected)
            .map(|i| i.id)
            .collect();
        self.intentions.retain(|i| i.protected);
        dropped
    }

    fn is_runnable(&self, id: IntentionId) -> bool {
        let any_protected = self.intentions.iter().any(|i| i.protected);
        self.intentions
            .iter()
            .any(|i| i.id == id && (i.protected || !any_protected))
    }

    /// Round-robin over runnable intentions in id order.
    fn next_runnable(&self) -> Option<IntentionId> {
        let any_protected = self.intentions.iter().any(|i| i.protected);
        let runnable: Vec<IntentionId> = self
            .intentions
            .iter()
            .filter(|i| i.protected || !any_protected)
            .map(|i| i.id)
            .collect();
        let after = self.last_run.unwrap_or(0);
        runnable
            .iter()
            .copied()
            .find(|id| *id > after)
            .or_else(|| runnable.first().copied())
    }

    fn run_step(&mut self, id: IntentionId, now: u64, actuators: &mut dyn Actuators, rep: &mut CycleReport) {
        let Some(pos) = self.intentions.iter().position(|i| i.id == id) else {
            return;
        };
        let protected = self.intentions[pos].protected;
        let (plan_index, step, bindings) = {
            let frame = self.intentions[pos].stack.last_mut().expect("live intention has a frame");
            let step = self.library.plans[frame.plan_index].body[frame.pc].clone();
            frame.pc += 1;
            (frame.plan_index, step, frame.bindings.clone())
        };
        rep.records.push(AgentRecord::Step {
            intention: id,
            protected,
            plan: self.library.plans[plan_index].name(),
            step: step.to_string(),
        });

        let result: Result<(), String> = match &step {
            Step::Action(lit) => {
                let ground = lit.substitute(&bindings);
                if !ground.is_ground() {
                    Err(format!("action {ground} is not ground"))
                } else {
                    match actuators.act(&self.name, &ground, now) {
                        ActionOutcome::Done => {
                            rep.records.push(AgentRecord::Action {
                                intention: id,
                                action: ground.to_string(),
                            });
                            rep.actions.push(ground);
                            Ok(())
                        }
                        ActionOutcome::Failed(r) => Err(r),
                        ActionOutcome::Unknown => Err(format!("no actuator registered for {}", ground.functor)),
                    }
                }
            }
            Step::Achieve(lit) => {
                let goal = lit.substitute(&bindings);
                let event = Event {
                    priority: if protected { Priority::Override } else { Priority::Normal },
                    ..Event::achieve(goal, now)
                };
                match select_plan_excluding(&event, &self.beliefs, &self.library, &[]) {
                    Some(inst) => {
                        rep.records.push(AgentRecord::PlanSelected {
                            event: event.to_string(),
                            plan: self.library.plans[inst.plan_index].name(),
                            intention: id,
                            protected,
                        });
                        self.intentions[pos].stack.push(Frame {
                            plan_index: inst.plan_index,
                            bindings: inst.bindings,
                            pc: 0,
                            tried: vec![inst.plan_index],
                            event,
                        });
                        Ok(())
                    }
                    None => Err(format!("no applicable plan for {event}")),
                }
            }
            Step::AddBelief(lit) => {
                let b = lit.substitute(&bindings);
                self.add_belief(b, now).map(|_| ()).map_err(|e| e.to_string())
            }
            Step::RemoveBelief(lit) => {
                let b = lit.substitute(&bindings);
                self.remove_belief(&b, now);
                Ok(())
            }
            Step::Schedule { delay, event } => {
                let payload = instantiate(event, &bindings, now);
                let text = payload.to_string();
                match self.schedule_at(*delay as i64, payload, now) {
                    Ok(timer) => {
                        rep.records.push(AgentRecord::TimerScheduled {
                            timer,
                            fire_at: now + delay,
                            event: text,
                        });
                        Ok(())
                    }
                    Err(e) => Err(e.to_string()),
                }
            }
            Step::DropAllIntentions => {
                let dropped = self.drop_unprotected();
                rep.records.push(AgentRecord::IntentionsDropped { by: Some(id), dropped });
                if !protected {
                    // the running intention went with the rest
                    return;
                }
                Ok(())
            }
            Step::Send {
                to,
                performative,
                content,
            } => {
                let to = to.substitute(&bindings);
                let content = content.substitute(&bindings);
                match to.as_text() {
                    Some(name) if content.is_ground() => {
                        let msg = Message {
                            from: self.name.clone(),
                            to: name.to_string(),
                            performative: *performative,
                            content,
                        };
                        rep.records.push(AgentRecord::Sent {
                            to: msg.to.clone(),
                            performative: msg.performative,
                            content: msg.content.to_string(),
                        });
                        rep.outbox.push(msg);
                        Ok(())
                    }
                    _ => Err(format!("cannot send {content} to {to}")),
                }
            }
        };

        let Some(pos) = self.intentions.iter().position(|i| i.id == id) else {
            return;
        };
        match result {
            Ok(()) => self.unwind_finished(pos, rep),
            Err(reason) => {
                rep.records.push(AgentRecord::StepFailed {
                    intention: id,
                    step: step.to_string(),
                    reason,
                });
                self.fail_frame(pos, rep);
            }
        }
    }

    /// Pops frames whose bodies are exhausted; retires the intention when empty.
    fn unwind_finished(&mut self, pos: usize, rep: &mut CycleReport) {
        let int = &mut self.intentions[pos];
        let root = int.stack[0].plan_index;
        while let Some(top) = int.stack.last() {
            if top.pc >= self.library.plans[top.plan_index].body.len() {
                int.stack.pop();
            } else {
                break;
            }
        }
        if int.stack.is_empty() {
            let id = int.id;
            self.intentions.remove(pos);
            rep.records.push(AgentRecord::IntentionDone {
                intention: id,
                plan: self.library.plans[root].name(),
            });
        }
    }

    /// Retries the failed frame's event with the next applicable untried plan,
    /// propagating the failure to the parent frame when none is left.
    fn fail_frame(&mut self, pos: usize, rep: &mut CycleReport) {
        let id = self.intentions[pos].id;
        while let Some(frame) = self.intentions[pos].stack.pop() {
            if let Some(inst) = select_plan_excluding(&frame.event, &self.beliefs, &self.library, &frame.tried) {
                let mut tried = frame.tried.clone();
                tried.push(inst.plan_index);
                rep.records.push(AgentRecord::PlanRetry {
                    intention: id,
                    event: frame.event.to_string(),
                    plan: self.library.plans[inst.plan_index].name(),
                });
                self.intentions[pos].stack.push(Frame {
                    plan_index: inst.plan_index,
                    bindings: inst.bindings,
                    pc: 0,
                    tried,
                    event: frame.event,
                });
                self.unwind_finished(pos, rep);
                return;
            }
            if self.intentions[pos].stack.is_empty() {
                self.intentions.remove(pos);
                rep.records.push(AgentRecord::IntentionFailed {
                    intention: id,
                    event: frame.event.to_string(),
                });
                return;
            }
        }
    }
}

fn instantiate(t: &Trigger, b: &Bindings, now: u64) -> Event {
    Event {
        polarity: t.polarity,
        kind: t.kind,
        content: t.literal.substitute(b),
        timestamp: now,
        priority: Priority::Normal,
    }
}
