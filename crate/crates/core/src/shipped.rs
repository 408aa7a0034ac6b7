//! Scenario documents bundled into the library, for tests, demos and as
//! defaults when no files are given.

use crate::agent::{parse_library, PlanLibrary};
use crate::fuzzy::RuleBase;
use crate::lifting::ApprovalPolicy;
use crate::mediation::ReservoirData;
use crate::org::{load_scheme, GoalScheme};
use crate::sfc::{load_chart, SfcChart};

pub const EXCHANGER_AGENT: &str = include_str!("../../../scenarios/exchanger/agent.asl");
pub const EXCHANGER_CHART: &str = include_str!("../../../scenarios/exchanger/stop_compression.sfc");
pub const STABILISER_RULES: &str = include_str!("../../../scenarios/exchanger/stabiliser.toml");

pub const LIFTING_SCHEME: &str = include_str!("../../../scenarios/lifting/scheme.org");
pub const RESERVOIR: &str = include_str!("../../../scenarios/lifting/reservoir.json");
pub const CONSTRAINTS: &str = include_str!("../../../scenarios/lifting/constraints.toml");

/// (role, document) for every lifting agent.
pub const LIFTING_AGENTS: [(&str, &str); 4] = [
    ("modeller", include_str!("../../../scenarios/lifting/agents/modeller.asl")),
    ("optimiser", include_str!("../../../scenarios/lifting/agents/optimiser.asl")),
    ("chatbot", include_str!("../../../scenarios/lifting/agents/chatbot.asl")),
    ("controller", include_str!("../../../scenarios/lifting/agents/controller.asl")),
];

pub const POLICIES: [(&str, &str); 4] = [
    ("all_accept", include_str!("../../../scenarios/lifting/policies/all_accept.toml")),
    ("contest_once", include_str!("../../../scenarios/lifting/policies/contest_once.toml")),
    ("always_contest", include_str!("../../../scenarios/lifting/policies/always_contest.toml")),
    ("operator_returns", include_str!("../../../scenarios/lifting/policies/operator_returns.toml")),
];

pub fn exchanger_agent() -> PlanLibrary {
    parse_library(EXCHANGER_AGENT).expect("shipped agent parses")
}

pub fn exchanger_chart() -> SfcChart {
    load_chart(EXCHANGER_CHART).expect("shipped chart loads")
}

pub fn stabiliser_rules() -> RuleBase {
    RuleBase::from_toml(STABILISER_RULES).expect("shipped rulebase loads")
}

pub fn lifting_scheme() -> GoalScheme {
    load_scheme(LIFTING_SCHEME).expect("shipped scheme loads")
}

pub fn lifting_agents() -> Vec<(String, PlanLibrary)> {
    LIFTING_AGENTS
        .iter()
        .map(|(n, src)| (n.to_string(), parse_library(src).expect("shipped agent parses")))
        .collect()
}

pub fn reservoir() -> ReservoirData {
    serde_json::from_str(RESERVOIR).expect("shipped reservoir parses")
}

pub fn policy(name: &str) -> Option<ApprovalPolicy> {
    let (_, src) = POLICIES.iter().find(|(n, _)| *n == name)?;
    Some(ApprovalPolicy::from_toml(src).expect("shipped policy parses"))
}

#[cfg(test)]
mod tests {
    #[test]
    fn every_document_loads() {
        super::exchanger_agent();
        super::exchanger_chart();
        super::stabiliser_rules();
        super::lifting_scheme();
        assert_eq!(super::lifting_agents().len(), 4);
        super::reservoir();
        for (n, _) in super::POLICIES {
            assert!(super::policy(n).is_some());
        }
        let c: crate::mediation::Constraints = toml::from_str(super::CONSTRAINTS).unwrap();
        assert_eq!(c.len(), 2);
    }
}
