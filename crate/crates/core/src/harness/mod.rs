//! Scenario configs, closed-loop runners, experiments and trace checks.

mod bench;
mod config;
mod exchanger;
mod verify;

pub use bench::{
    bench_latency, draw_stop_times, hot_stop_setup, override_check, override_window, safety_comparison, BenchError,
    BenchReport, OverrideCase, ParadigmLatency, SafetyCase, SafetyReport, Stats, BENCH_BASE_S,
};
pub use config::{
    load_scenario, ApproverKind, ConfigError, Documents, ExchangerSetup, LiftingSection, LiftingSetup, Mode, Scenario,
    ScenarioConfig, Setup,
};
pub use exchanger::{
    compare, compute_metrics, run_exchanger, Check, Comparison, Controller, ExchangerMetrics, ExchangerRun, Latency,
    MetricsError, REACTIONS, SETTLE_BAND,
};
pub use verify::{diff_traces, ungated_applies, verify_trace, TraceDiff, VerifyReport};

use crate::lifting::{
    stub_registry, Approver, DecisionDesk, InteractiveApprover, RandomApprover, ScriptedApprover, Workflow,
    WorkflowError,
};
use crate::mediation::{stub, EntityDescriptor, HttpTransport, Registry};
use serde_json::{json, Value};

/// Files and figures produced by one `run`.
#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Trace file names with their NDJSON text.
    pub traces: Vec<(String, String)>,
    pub metrics: Value,
    pub passed: bool,
}

/// Runs a resolved scenario headless. `seed` replaces the config's seed.
pub fn run_scenario(sc: &Scenario, seed: u64) -> Result<RunOutput, WorkflowError> {
    let out = match (&sc.setup, sc.config.mode) {
        (Setup::Exchanger(s), Mode::ExchangerCompare) => {
            let c = compare(s, seed);
            RunOutput {
                passed: c.passed(),
                metrics: c.metrics_json(),
                traces: vec![
                    ("trace-agent.ndjson".into(), c.agent.trace.to_ndjson()),
                    ("trace-sfc.ndjson".into(), c.sfc.trace.to_ndjson()),
                ],
            }
        }
        (Setup::Exchanger(s), mode) => {
            let ctl = if mode == Mode::ExchangerSfc { Controller::Sfc } else { Controller::Agent };
            let r = run_exchanger(s, ctl, seed);
            RunOutput {
                passed: r.metrics.passed(),
                metrics: serde_json::to_value(&r.metrics).expect("metrics serialize"),
                traces: vec![("trace.ndjson".into(), r.trace.to_ndjson())],
            }
        }
        (Setup::Lifting(l), _) => {
            let mut wf = build_workflow(l, seed, None, None)?;
            wf.run();
            let metrics = wf.metrics();
            let trace = wf.into_trace();
            let report = verify_trace(trace.records(), None);
            let mut doc = serde_json::to_value(&metrics).expect("metrics serialize");
            doc["checks"] = json!(report.checks);
            RunOutput {
                passed: report.passed(),
                metrics: doc,
                traces: vec![("trace.ndjson".into(), trace.to_ndjson())],
            }
        }
    };
    Ok(out)
}

/// Builds the lifting workflow for a resolved setup. Artifacts listed under
/// `endpoints` are reached through `transport`; the rest run in process.
pub fn build_workflow(
    setup: &LiftingSetup,
    seed: u64,
    desk: Option<DecisionDesk>,
    transport: Option<Box<dyn HttpTransport>>,
) -> Result<Workflow, WorkflowError> {
    let s = &setup.settings;
    let registry = if s.endpoints.is_empty() {
        stub_registry(&setup.reservoir, s.agency_faults)
    } else {
        let mut r = Registry::default();
        if let Some(t) = transport {
            r = r.with_http(t);
        }
        for name in crate::mediation::STUB_NAMES {
            match s.endpoints.get(name) {
                Some(ep) => r.register_entity(EntityDescriptor::http_artifact(name, ep))?,
                None => r.register_artifact(
                    EntityDescriptor::artifact(name),
                    stub(name, &setup.reservoir, s.agency_faults).expect("stub name"),
                )?,
            }
        }
        r
    };
    let desk = desk.unwrap_or_default();
    let approver: Box<dyn Approver> = match s.approver {
        ApproverKind::Scripted => Box::new(ScriptedApprover::new(setup.policy.clone())),
        ApproverKind::Random => Box::new(RandomApprover::new(seed, s.contest_probability)),
        ApproverKind::Interactive => Box::new(InteractiveApprover::new(desk.clone())),
    };
    Ok(Workflow::new(
        setup.workflow.clone(),
        setup.scheme.clone(),
        setup.agents.clone(),
        registry,
        approver,
    )?
    .with_desk(desk))
}

#[cfg(test)]
mod tests;
