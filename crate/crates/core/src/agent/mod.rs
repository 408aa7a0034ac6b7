//! Minimal BDI runtime: belief base, prioritised event queue, ordered plan
//! library, intention stacks with override dropping, and tick-based timers.

mod belief;
mod event;
mod parse;
mod plan;
mod runtime;

pub use belief::BeliefBase;
pub use event::{Event, EventKind, EventQueue, Polarity, Priority};
pub use parse::{parse_belief, parse_library, LibraryError};
pub use plan::{
    select_plan, select_plan_excluding, solve_context, Condition, Performative, Plan, PlanInstance, PlanLibrary, Step,
    Trigger,
};
pub use runtime::{
    AcceptAll, ActionOutcome, Actuators, Agent, AgentError, AgentRecord, BeliefChange, CancelOutcome, CycleReport,
    Intention, IntentionId, Message, Timer, TimerId,
};
