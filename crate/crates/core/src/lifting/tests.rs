use std::collections::BTreeMap;

use proptest::prelude::*;

use super::*;
use crate::mediation::Registry;
use crate::org::GoalStatus;
use crate::shipped;
use crate::trace::{check_sequence, TraceRecord};

fn build(approver: Box<dyn Approver>, cfg: WorkflowConfig, agency_faults: u32) -> Workflow {
    Workflow::new(
        cfg,
        shipped::lifting_scheme(),
        shipped::lifting_agents(),
        stub_registry(&shipped::reservoir(), agency_faults),
        approver,
    )
    .unwrap()
}

fn scripted(policy: &str) -> Box<dyn Approver> {
    Box::new(ScriptedApprover::new(shipped::policy(policy).unwrap()))
}

fn run(policy: &str) -> Workflow {
    let mut w = build(scripted(policy), WorkflowConfig::default(), 0);
    w.run();
    w
}

fn of_kind<'a>(w: &'a Workflow, kind: &str) -> Vec<&'a TraceRecord> {
    w.trace().records().iter().filter(|r| r.kind == kind).collect()
}

fn verdicts(w: &Workflow) -> Vec<(String, Actor, Verdict)> {
    w.decisions()
        .iter()
        .map(|d| (d.proposal_id.clone(), d.actor, d.verdict))
        .collect()
}

/// Independent reading of the trace: every applied setup must be preceded
/// by an engineer accept and a later operator accept of the same proposal,
/// with no contest of it in between.
fn gate_respected(records: &[TraceRecord]) -> bool {
    let mut seen: Vec<(String, String, String)> = vec![];
    for r in records {
        if r.kind == "decision" {
            let p = &r.payload;
            seen.push((
                p["proposal_id"].as_str().unwrap().into(),
                p["actor"].as_str().unwrap().into(),
                p["verdict"].as_str().unwrap().into(),
            ));
        }
        if r.kind == "setup-applied" {
            let id = r.payload["proposal_id"].as_str().unwrap();
            let mine: Vec<_> = seen.iter().filter(|(p, _, _)| p == id).collect();
            let last_contest = mine.iter().rposition(|(_, _, v)| v == "contest");
            let tail = &mine[last_contest.map_or(0, |i| i + 1)..];
            let eng = tail.iter().position(|(_, a, v)| a == "engineer" && v == "accept");
            let ok = eng.is_some_and(|e| tail[e..].iter().any(|(_, a, v)| a == "operator" && v == "accept"));
            if !ok {
                return false;
            }
        }
    }
    true
}

#[test]
fn all_accept_closes_every_stage() {
    let w = run("all_accept");
    assert_eq!(w.outcome(), Some(&Outcome::Achieved));
    let m = w.metrics();
    assert_eq!(m.stages_achieved, 5);
    assert_eq!(m.rounds, 1);
    assert_eq!(m.artifact_calls["control_system"], 1);
    assert_eq!(m.receipts, ["R-000001"]);
    assert_eq!(
        verdicts(&w),
        [
            ("P-1".into(), Actor::Engineer, Verdict::Accept),
            ("P-1".into(), Actor::Operator, Verdict::Accept)
        ]
    );
    // separable concave objective: peaks at P/2 and 60, both inside the box
    let p = &w.proposals()[0];
    assert_eq!(p.parameters["injection_rate"], 210.0 / 2.0);
    assert_eq!(p.parameters["pump_frequency"], 60.0);
    for s in w.scheme().goals().map(|g| g.id.as_str()) {
        assert_eq!(w.state().get(s), GoalStatus::Achieved, "{s}");
    }
    check_sequence(w.trace().records()).unwrap();
    assert!(gate_respected(w.trace().records()));
    // stages close in scheme order
    let order: Vec<u64> = w.scheme().goal("optimise_lifting").unwrap()
        .children
        .iter()
        .map(|c| m.stages[c].achieved.unwrap())
        .collect();
    assert!(order.windows(2).all(|p| p[0] < p[1]), "{order:?}");
}

#[test]
fn engineer_contest_pins_parameter_for_next_round() {
    let w = run("contest_once");
    assert!(w.outcome().unwrap().is_achieved());
    let ps = w.proposals();
    assert_eq!(ps.len(), 2);
    assert_eq!(ps[1].constraints["injection_rate"], [80.0, 80.0]);
    assert_eq!(ps[1].constraints["pump_frequency"], ps[0].constraints["pump_frequency"]);
    assert_eq!(ps[1].parameters["injection_rate"], 80.0);
    assert!(ps[1].objective_value < ps[0].objective_value);
    assert_eq!(
        verdicts(&w),
        [
            ("P-1".into(), Actor::Engineer, Verdict::Contest),
            ("P-2".into(), Actor::Engineer, Verdict::Accept),
            ("P-2".into(), Actor::Operator, Verdict::Accept)
        ]
    );
    let rev = of_kind(&w, "revision");
    assert_eq!(rev.len(), 1);
    assert_eq!(rev[0].payload["reopen"], "stage_iii_optimise_parameters");
    let applied = of_kind(&w, "setup-applied");
    assert_eq!(applied[0].payload["proposal_id"], "P-2");
}

#[test]
fn endless_contest_stops_after_budget_without_applying() {
    for max_rounds in [1, 3, 5] {
        let cfg = WorkflowConfig {
            max_rounds,
            ..Default::default()
        };
        let mut w = build(scripted("always_contest"), cfg, 0);
        let out = w.run().clone();
        assert!(matches!(out, Outcome::Failed { .. }), "{out:?}");
        let m = w.metrics();
        assert_eq!(m.rounds, max_rounds as usize);
        assert_eq!(m.engineer_reviews, max_rounds);
        assert_eq!(m.artifact_calls.get("control_system"), None);
        assert_eq!(m.stages_achieved, 3);
        assert!(of_kind(&w, "setup-applied").is_empty());
        assert_eq!(of_kind(&w, "revision-exhausted").len(), 1);
        assert_eq!(w.state().get("optimise_lifting"), GoalStatus::Failed);
    }
}

/// Records every request it sees and accepts after a scripted first pass.
struct Recording {
    inner: ScriptedApprover,
    seen: std::sync::Arc<std::sync::Mutex<Vec<ReviewRequest>>>,
}

impl Approver for Recording {
    fn decide(&mut self, req: &ReviewRequest) -> Option<ApprovalDecision> {
        self.seen.lock().unwrap().push(req.clone());
        self.inner.decide(req)
    }
}

#[test]
fn operator_contest_returns_to_engineer_with_note() {
    let seen = std::sync::Arc::new(std::sync::Mutex::new(vec![]));
    let ap = Recording {
        inner: ScriptedApprover::new(shipped::policy("operator_returns").unwrap()),
        seen: seen.clone(),
    };
    let mut w = build(Box::new(ap), WorkflowConfig::default(), 0);
    assert!(w.run().is_achieved());
    assert_eq!(w.proposals().len(), 1, "an operator contest does not re-optimise");
    let v: Vec<_> = verdicts(&w).into_iter().map(|(_, a, v)| (a, v)).collect();
    assert_eq!(
        v,
        [
            (Actor::Engineer, Verdict::Accept),
            (Actor::Operator, Verdict::Contest),
            (Actor::Engineer, Verdict::Accept),
            (Actor::Operator, Verdict::Accept)
        ]
    );
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].note, None);
    assert_eq!(seen[2].actor, Actor::Engineer);
    assert_eq!(seen[2].note.as_deref(), Some("valve maintenance on Thursday, please double check"));
    assert_eq!(of_kind(&w, "revision")[0].payload["reopen"], "engineer_review");
}

#[test]
fn operator_contests_count_against_the_budget() {
    let policy = ApprovalPolicy::from_toml("[operator]\notherwise = \"contest\"\n").unwrap();
    let cfg = WorkflowConfig {
        max_rounds: 3,
        ..Default::default()
    };
    let mut w = build(Box::new(ScriptedApprover::new(policy)), cfg, 0);
    assert!(matches!(w.run(), Outcome::Failed { .. }));
    assert_eq!(w.metrics().engineer_reviews, 3);
    assert_eq!(w.metrics().artifact_calls.get("control_system"), None);
}

#[test]
fn double_check_needs_only_a_scheme_change() {
    let scheme = with_double_check(&shipped::lifting_scheme()).unwrap();
    assert_ne!(scheme.version(), shipped::lifting_scheme().version());
    let mut w = Workflow::new(
        WorkflowConfig::default(),
        scheme,
        shipped::lifting_agents(),
        stub_registry(&shipped::reservoir(), 0),
        scripted("all_accept"),
    )
    .unwrap();
    assert!(w.run().is_achieved());
    let v: Vec<_> = verdicts(&w).into_iter().map(|(_, a, _)| a).collect();
    assert_eq!(v, [Actor::Engineer, Actor::Operator, Actor::Engineer]);
    let done: Vec<&str> = of_kind(&w, "goal-status")
        .into_iter()
        .filter(|r| r.payload["status"] == "achieved")
        .filter_map(|r| r.goal.as_deref())
        .collect();
    let at = |g| done.iter().position(|d| *d == g).unwrap();
    assert!(at("operator_confirmation") < at("double_check_with_engineer"));
    assert!(at("double_check_with_engineer") < at("apply_setup"));
}

#[test]
fn agency_retries_then_gives_up() {
    let mut w = build(scripted("all_accept"), WorkflowConfig::default(), 3);
    assert!(w.run().is_achieved());
    assert_eq!(w.metrics().artifact_calls["agency"], 4);
    assert_eq!(w.metrics().receipts, ["R-000001"]);

    let mut w = build(scripted("all_accept"), WorkflowConfig::default(), 4);
    let out = w.run().clone();
    assert!(matches!(out, Outcome::Failed { goal: Some(ref g), .. } if g == "stage_v_report_agency"), "{out:?}");
    assert_eq!(w.metrics().artifact_calls["agency"], 4);
    assert!(w.metrics().receipts.is_empty());
    assert_eq!(w.metrics().stages_achieved, 4);
}

#[test]
fn identical_inputs_give_identical_traces() {
    let a = run("contest_once").trace().to_ndjson();
    let b = run("contest_once").trace().to_ndjson();
    assert_eq!(a, b);
}

#[test]
fn agent_records_carry_their_goal() {
    let w = run("all_accept");
    let actions: Vec<&TraceRecord> = w
        .trace()
        .records()
        .iter()
        .filter(|r| matches!(r.kind.as_str(), "action" | "artifact-call" | "proposal" | "decision" | "routed" | "message"))
        .collect();
    assert!(!actions.is_empty());
    for r in actions {
        assert!(r.goal.is_some(), "{r:?}");
    }
    let call = of_kind(&w, "artifact-call");
    assert_eq!(call[0].goal.as_deref(), Some("stage_i_acquire_reservoir_data"));
    assert_eq!(call[0].source, "modeller");
    // the environment's records follow the action that produced them
    let recs = w.trace().records();
    let i = recs.iter().position(|r| r.kind == "artifact-call").unwrap();
    assert!(recs[i - 1].kind == "action" || recs[i - 1].kind == "step-failed");
}

#[test]
fn messages_arrive_one_tick_after_sending() {
    let w = run("all_accept");
    let routed = of_kind(&w, "routed");
    assert!(routed.len() > 10);
    for r in routed {
        assert_eq!(r.payload["deliver_at"].as_u64().unwrap(), r.tick + 1);
    }
}

#[test]
fn interactive_desk_drives_the_gate() {
    let desk = DecisionDesk::new();
    let mut w = build(
        Box::new(InteractiveApprover::new(desk.clone())),
        WorkflowConfig::default(),
        0,
    )
    .with_desk(desk.clone());
    let wait_for = |w: &mut Workflow, actor: Actor| {
        for _ in 0..100 {
            w.step();
            if let Some(p) = desk.pending().into_iter().find(|p| p.request.actor == actor) {
                return p;
            }
        }
        panic!("no {actor} review");
    };
    let p = wait_for(&mut w, Actor::Engineer);
    assert_eq!(p.request.proposal.id, "P-1");
    assert_eq!(
        desk.submit(ApprovalDecision::accept("P-1", Actor::Operator)),
        Err(SubmitError::Stale("P-1".into(), Actor::Operator))
    );
    let d = chatbot_parse("contest P-1 injection_rate=90 lower please").decision(Actor::Engineer).unwrap();
    desk.submit(d).unwrap();
    let p = wait_for(&mut w, Actor::Engineer);
    assert_eq!(p.request.proposal.id, "P-2");
    assert_eq!(p.request.proposal.parameters["injection_rate"], 90.0);
    assert_eq!(
        desk.submit(ApprovalDecision::accept("P-1", Actor::Engineer)),
        Err(SubmitError::Stale("P-1".into(), Actor::Engineer))
    );
    desk.submit(ApprovalDecision::accept("P-2", Actor::Engineer)).unwrap();
    wait_for(&mut w, Actor::Operator);
    desk.submit(ApprovalDecision::accept("P-2", Actor::Operator)).unwrap();
    assert!(w.run().is_achieved());
    assert!(gate_respected(w.trace().records()));
    assert_eq!(of_kind(&w, "review-pending").len(), 3);
}

#[test]
fn silent_human_gets_reminded_then_aborts() {
    let cfg = WorkflowConfig {
        reminder_after: Some(10),
        abort_after: Some(30),
        ..Default::default()
    };
    let mut w = build(Box::new(InteractiveApprover::new(DecisionDesk::new())), cfg, 0);
    let out = w.run().clone();
    assert!(matches!(out, Outcome::Aborted { ref goal, .. } if goal == "engineer_review"), "{out:?}");
    let remind = of_kind(&w, "reminder");
    let abort = of_kind(&w, "abort");
    assert_eq!(remind.len(), 1);
    assert_eq!(abort.len(), 1);
    assert_eq!(abort[0].tick - remind[0].tick, 20);
    assert!(!w.metrics().artifact_calls.contains_key("control_system"));
}

#[test]
fn stalls_are_reported() {
    let cfg = WorkflowConfig {
        max_ticks: 50,
        ..Default::default()
    };
    let mut w = build(Box::new(InteractiveApprover::new(DecisionDesk::new())), cfg, 0);
    assert_eq!(w.run(), &Outcome::Stalled { ticks: 50 });
}

#[test]
fn construction_checks_roles_and_artifacts() {
    let mut agents = shipped::lifting_agents();
    agents.retain(|(n, _)| n != "chatbot");
    let err = Workflow::new(
        WorkflowConfig::default(),
        shipped::lifting_scheme(),
        agents,
        stub_registry(&shipped::reservoir(), 0),
        scripted("all_accept"),
    )
    .unwrap_err();
    assert!(matches!(err, WorkflowError::MissingAgent(r) if r == "chatbot"));
    let err = Workflow::new(
        WorkflowConfig::default(),
        shipped::lifting_scheme(),
        shipped::lifting_agents(),
        Registry::default(),
        scripted("all_accept"),
    )
    .unwrap_err();
    assert!(matches!(err, WorkflowError::MissingArtifact(_)));
}

#[test]
fn snapshot_lists_goals_in_scheme_order() {
    let w = run("all_accept");
    let s = w.snapshot();
    assert_eq!(s["goals"][0]["goal"], "optimise_lifting");
    assert_eq!(s["goals"].as_array().unwrap().len(), w.scheme().goals().count());
    assert_eq!(s["receipts"][0], "R-000001");
    assert_eq!(s["outcome"]["outcome"], "achieved");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Whatever the humans do, nothing is applied without both approvals.
    #[test]
    fn random_humans_never_bypass_the_gate(seed in any::<u64>(), p in 0.0f64..1.0) {
        let mut w = build(Box::new(RandomApprover::new(seed, p)), WorkflowConfig::default(), 0);
        let out = w.run().clone();
        let stalled = matches!(out, Outcome::Stalled { .. });
        prop_assert!(!stalled);
        prop_assert!(gate_respected(w.trace().records()));
        let applied = w.metrics().artifact_calls.get("control_system").copied().unwrap_or(0);
        prop_assert_eq!(applied, u32::from(out.is_achieved()));
        prop_assert!(w.metrics().engineer_reviews <= 5);
        check_sequence(w.trace().records()).unwrap();
    }

    /// The first pass through the gate matches the reference protocol.
    #[test]
    fn workflow_agrees_with_reference_protocol(seed in any::<u64>()) {
        let mut w = build(Box::new(RandomApprover::new(seed, 0.5)), WorkflowConfig::default(), 0);
        w.run();
        let first = w.proposals()[0].clone();
        let (log, outcome) = approval_protocol(&first, &mut RandomApprover::new(seed, 0.5));
        prop_assert_eq!(&w.decisions()[..log.len()], &log[..]);
        let revisions = of_kind(&w, "revision");
        match outcome {
            ProtocolOutcome::Apply => prop_assert!(w.decisions().len() == 2),
            ProtocolOutcome::Reoptimise { adjustments, .. } => {
                prop_assert_eq!(&revisions[0].payload["reopen"], "stage_iii_optimise_parameters");
                for (k, v) in adjustments {
                    prop_assert_eq!(w.proposals()[1].constraints[&k], [v, v]);
                }
            }
            ProtocolOutcome::BackToEngineer { .. } => {
                prop_assert_eq!(&revisions[0].payload["reopen"], "engineer_review");
            }
            ProtocolOutcome::Waiting => unreachable!(),
        }
    }
}

#[test]
fn proposal_constraints_accumulate_pins() {
    // two contests pin both parameters in turn
    let policy = ApprovalPolicy::from_toml(
        "[engineer]\nscript = [{ verdict = \"contest\", adjust = { injection_rate = 70.0 } }, { verdict = \"contest\", adjust = { pump_frequency = 50.0 } }]\n",
    )
    .unwrap();
    let mut w = build(Box::new(ScriptedApprover::new(policy)), WorkflowConfig::default(), 0);
    assert!(w.run().is_achieved());
    let last = w.proposals().last().unwrap();
    assert_eq!(
        last.parameters,
        BTreeMap::from([("injection_rate".into(), 70.0), ("pump_frequency".into(), 50.0)])
    );
}
