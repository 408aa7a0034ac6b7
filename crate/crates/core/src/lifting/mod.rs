//! The artificial-lifting organisation: a goal scheme run by a coordinator,
//! plan-driven agents that call artifacts, and human proxies that must both
//! accept a proposal before it reaches the control system.

mod approval;
mod chatbot;
mod workflow;

pub use approval::{
    approval_protocol, gate_open, Actor, ActorPolicy, ApprovalDecision, ApprovalPolicy, Approver, DecisionDesk,
    DecisionError, InteractiveApprover, OptimizationProposal, PendingReview, PolicyError, ProtocolOutcome,
    RandomApprover, ReviewRequest, ScriptedApprover, ScriptedDecision, SubmitError, Verdict,
};
pub use chatbot::{chatbot_parse, ChatCommand, HELP};
pub use workflow::{
    stub_registry, LiftingMetrics, Outcome, StageTiming, Workflow, WorkflowConfig, WorkflowError, COORDINATOR,
    REQUIRED_ARTIFACTS,
};

use crate::org::{Goal, GoalScheme, SchemeError};
use crate::term::Literal;

/// The scheme with an extra engineer check between the operator's
/// confirmation and applying the setup. Only the scheme changes; the
/// chatbot's generic review plan covers the new goal.
pub fn with_double_check(scheme: &GoalScheme) -> Result<GoalScheme, SchemeError> {
    let goal = Goal::leaf(
        "double_check_with_engineer",
        "chatbot",
        "The engineer looks at the confirmed setup once more",
    )
    .with_task(Literal::parse("review(engineer)").expect("literal"));
    scheme.insert_subgoal("stage_iv_apply_setup", 2, goal)
}

#[cfg(test)]
mod tests;
