use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;

use crate::term::{unify_literals, Bindings, Literal, Term};

use super::belief::BeliefBase;
use super::event::{Event, EventKind, Polarity};

/// Event pattern a plan reacts to, e.g. `+compressor_stopped` or `+!goal(G, T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trigger {
    pub polarity: Polarity,
    pub kind: EventKind,
    pub literal: Literal,
}

impl Trigger {
    pub fn matches(&self, event: &Event, b: &mut Bindings) -> bool {
        self.polarity == event.polarity
            && self.kind == event.kind
            && unify_literals(&self.literal, &event.content, b)
    }
}

impl fmt::Display for Trigger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = match self.polarity {
            Polarity::Added => "+",
            Polarity::Removed => "-",
        };
        let bang = if self.kind == EventKind::Achieve { "!" } else { "" };
        write!(f, "{sign}{bang}{}", self.literal)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub negated: bool,
    pub literal: Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Performative {
    Tell,
    Achieve,
    Reply,
}

impl Performative {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tell" => Some(Self::Tell),
            "achieve" => Some(Self::Achieve),
            "reply" => Some(Self::Reply),
            _ => None,
        }
    }
}

impl fmt::Display for Performative {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Tell => "tell",
            Self::Achieve => "achieve",
            Self::Reply => "reply",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Action(Literal),
    Achieve(Literal),
    AddBelief(Literal),
    RemoveBelief(Literal),
    Schedule { delay: u64, event: Trigger },
    DropAllIntentions,
    Send {
        to: Term,
        performative: Performative,
        content: Literal,
    },
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Step::Action(l) => write!(f, "{l}"),
            Step::Achieve(l) => write!(f, "!{l}"),
            Step::AddBelief(l) => write!(f, "+{l}"),
            Step::RemoveBelief(l) => write!(f, "-{l}"),
            Step::Schedule { delay, event } => write!(f, ".at({delay},{event})"),
            Step::DropAllIntentions => f.write_str(".drop_all_intentions"),
            Step::Send {
                to,
                performative,
                content,
            } => write!(f, ".send({to},{performative},{content})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub label: Option<String>,
    pub trigger: Trigger,
    pub context: Vec<Condition>,
    pub body: Vec<Step>,
    pub index: usize,
}

impl Plan {
    pub fn name(&self) -> String {
        match &self.label {
            Some(l) => l.clone(),
            None => format!("p{}", self.index),
        }
    }
}

/// An ordered plan library plus the agent's initial mental state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlanLibrary {
    pub plans: Vec<Plan>,
    pub overrides: BTreeSet<String>,
    pub initial_beliefs: Vec<Literal>,
    pub initial_goals: Vec<Literal>,
}

impl PlanLibrary {
    pub fn push(&mut self, mut plan: Plan) {
        plan.index = self.plans.len();
        self.plans.push(plan);
    }

    /// Appends `other`'s plans after this library's plans.
    pub fn append(&mut self, other: PlanLibrary) {
        for p in other.plans {
            self.push(p);
        }
        self.overrides.extend(other.overrides);
        self.initial_beliefs.extend(other.initial_beliefs);
        self.initial_goals.extend(other.initial_goals);
    }

    pub fn is_override(&self, event_content: &Literal, polarity: Polarity) -> bool {
        polarity == Polarity::Added && self.overrides.contains(&event_content.functor)
    }
}

/// A selected plan with its variables bound.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanInstance {
    pub plan_index: usize,
    pub bindings: Bindings,
}

/// First applicable plan in declaration order.
pub fn select_plan(event: &Event, beliefs: &BeliefBase, library: &PlanLibrary) -> Option<PlanInstance> {
    select_plan_excluding(event, beliefs, library, &[])
}

pub fn select_plan_excluding(
    event: &Event,
    beliefs: &BeliefBase,
    library: &PlanLibrary,
    tried: &[usize],
) -> Option<PlanInstance> {
    library
        .plans
        .iter()
        .filter(|p| !tried.contains(&p.index))
        .find_map(|p| {
            let mut b = Bindings::default();
            if !p.trigger.matches(event, &mut b) {
                return None;
            }
            solve_context(&p.context, beliefs, b).map(|bindings| PlanInstance {
                plan_index: p.index,
                bindings,
            })
        })
}

/// Finds the first solution of a conjunction, scanning beliefs in insertion order.
pub fn solve_context(conds: &[Condition], beliefs: &BeliefBase, b: Bindings) -> Option<Bindings> {
    let Some((first, rest)) = conds.split_first() else {
        return Some(b);
    };
    if first.negated {
        let lit = first.literal.substitute(&b);
        let mut probe = b.clone();
        let any = beliefs.iter().any(|bel| {
            let hit = unify_literals(&lit, bel, &mut probe);
            probe = b.clone();
            hit
        });
        return if any { None } else { solve_context(rest, beliefs, b) };
    }
    for bel in beliefs.iter() {
        let mut nb = b.clone();
        if unify_literals(&first.literal, bel, &mut nb) {
            if let Some(sol) = solve_context(rest, beliefs, nb) {
                return Some(sol);
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::parse_library;

    fn ev(src: &str) -> Event {
        let lit = Literal::parse(src).unwrap();
        Event::belief(Polarity::Added, lit, 0)
    }

    fn base(items: &[&str]) -> BeliefBase {
        let mut b = BeliefBase::default();
        for i in items {
            b.insert(Literal::parse(i).unwrap());
        }
        b
    }

    const CONTROL_RULE: &str = "@controlRule1 +compressor_stopped : switch(open) & cond_op(normal) <- take_valve.";

    #[test]
    fn applicable_when_both_conditions_hold() {
        let lib = parse_library(CONTROL_RULE).unwrap();
        let inst = select_plan(&ev("compressor_stopped"), &base(&["switch(open)", "cond_op(normal)"]), &lib).unwrap();
        assert_eq!(lib.plans[inst.plan_index].name(), "controlRule1");
    }

    #[test]
    fn unsatisfied_context_gives_none() {
        let lib = parse_library(CONTROL_RULE).unwrap();
        assert!(select_plan(&ev("compressor_stopped"), &base(&["cond_op(normal)"]), &lib).is_none());
    }

    #[test]
    fn first_applicable_wins() {
        let lib = parse_library(
            "@a +compressor_stopped : switch(open) <- first.\n@b +compressor_stopped <- second.",
        )
        .unwrap();
        let inst = select_plan(&ev("compressor_stopped"), &base(&["switch(open)"]), &lib).unwrap();
        assert_eq!(lib.plans[inst.plan_index].name(), "a");
        let inst = select_plan(&ev("compressor_stopped"), &base(&[]), &lib).unwrap();
        assert_eq!(lib.plans[inst.plan_index].name(), "b");
    }

    #[test]
    fn context_binds_in_insertion_order() {
        let lib = parse_library("+go : level(X) <- report(X).").unwrap();
        let inst = select_plan(&ev("go"), &base(&["level(3)", "level(1)"]), &lib).unwrap();
        assert_eq!(inst.bindings.get("X"), Some(&Term::Num(3.0)));
    }

    #[test]
    fn negated_condition() {
        let lib = parse_library("+go : ready & not busy <- run.").unwrap();
        assert!(select_plan(&ev("go"), &base(&["ready"]), &lib).is_some());
        assert!(select_plan(&ev("go"), &base(&["ready", "busy"]), &lib).is_none());
    }

    #[test]
    fn backtracks_across_conditions() {
        let lib = parse_library("+go : item(X) & good(X) <- use(X).").unwrap();
        let inst = select_plan(&ev("go"), &base(&["item(a)", "item(b)", "good(b)"]), &lib).unwrap();
        assert_eq!(inst.bindings.get("X"), Some(&Term::atom("b")));
    }
}
