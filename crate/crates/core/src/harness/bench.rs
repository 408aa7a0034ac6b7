//! Seeded experiments over many exchanger runs: the reaction-latency
//! benchmark, the hot stop-transient comparison and the override check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::ExchangerSetup;
use super::exchanger::{run_exchanger, Check, Controller};
use crate::plant::{Injection, ValveOnStop};
use crate::trace::TraceRecord;

/// Time of the earliest stop the benchmark draws.
pub const BENCH_BASE_S: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stats {
    pub n: usize,
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    /// Population standard deviation.
    pub stddev: f64,
}

impl Stats {
    pub fn of(xs: &[f64]) -> Option<Self> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            n: xs.len(),
            min: xs.iter().copied().fold(f64::INFINITY, f64::min),
            mean,
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            stddev: var.sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParadigmLatency {
    pub stats: Stats,
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub trials: usize,
    pub seed: u64,
    pub polling_period: f64,
    pub tick_dt: f64,
    pub stop_times: Vec<f64>,
    pub agent: ParadigmLatency,
    pub sfc: ParadigmLatency,
    pub checks: Vec<Check>,
}

impl BenchReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BenchError {
    #[error("need at least one trial")]
    NoTrials,
    #[error("trial {trial}: {controller:?} never answered the compressor stop")]
    NoResponse { trial: usize, controller: Controller },
}

/// Stop times drawn uniformly on the tick grid over one polling interval.
pub fn draw_stop_times(setup: &ExchangerSetup, trials: usize, seed: u64) -> Vec<f64> {
    let p = &setup.params;
    let poll_ticks = p.ticks(setup.chart.polling_period).max(1);
    let base = p.ticks(BENCH_BASE_S);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..trials)
        .map(|_| crate::trace::clock_of(base + rng.random_range(0..poll_ticks), p.tick_dt))
        .collect()
}

/// Reaction latency to a compressor stop, per paradigm, over `trials`
/// seeded stop times. Only the stop is injected; each run lasts until
/// the slower controller must have answered.
pub fn bench_latency(setup: &ExchangerSetup, trials: usize, seed: u64) -> Result<BenchReport, BenchError> {
    if trials == 0 {
        return Err(BenchError::NoTrials);
    }
    let p = &setup.params;
    let poll = setup.chart.polling_period;
    let stop_times = draw_stop_times(setup, trials, seed);
    let mut lat = [vec![], vec![]];
    for (trial, &at) in stop_times.iter().enumerate() {
        let mut s = setup.clone();
        s.injections = vec![Injection::CompressorStop { at }];
        s.duration = at + p.rundown_s + poll + 1.0;
        for (i, c) in [Controller::Agent, Controller::Sfc].into_iter().enumerate() {
            let run = run_exchanger(&s, c, seed);
            let l = run
                .metrics
                .latency("+compressor_stopped")
                .ok_or(BenchError::NoResponse { trial, controller: c })?;
            lat[i].push(l);
        }
    }
    let [agent, sfc] = lat.map(|samples| ParadigmLatency {
        stats: Stats::of(&samples).expect("trials >= 1"),
        samples,
    });
    let checks = vec![
        Check::new("agent-max-zero", agent.stats.max == 0.0, format!("agent max {} s", agent.stats.max)),
        Check::new(
            "sfc-below-period",
            sfc.stats.min >= 0.0 && sfc.stats.max < poll,
            format!("sfc in [{}, {}] s, period {poll} s", sfc.stats.min, sfc.stats.max),
        ),
    ];
    Ok(BenchReport {
        trials,
        seed,
        polling_period: poll,
        tick_dt: p.tick_dt,
        stop_times,
        agent,
        sfc,
        checks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SafetyCase {
    pub initial_temperature: f64,
    pub stop_at: f64,
    pub agent_above_s: f64,
    pub sfc_above_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SafetyReport {
    pub cases: Vec<SafetyCase>,
    /// Cases where the agent spent no longer above T_abnormal.
    pub not_worse: usize,
    /// Cases where it spent strictly less.
    pub strictly_better: usize,
}

/// The hot stop transient: the compressor stops while the stage runs just
/// below T_abnormal and the upstream valve fails closed, so the temperature
/// crosses the threshold until a controller opens the valve.
pub fn hot_stop_setup(base: &ExchangerSetup, initial_temperature: f64, stop_at: f64) -> ExchangerSetup {
    let mut s = base.clone();
    s.params.valve_on_stop = ValveOnStop::Close;
    s.initial_temperature = initial_temperature;
    s.injections = vec![Injection::CompressorStop { at: stop_at }];
    s.duration = 60.0;
    s
}

/// Compares time above T_abnormal over `n` seeded hot stop transients.
pub fn safety_comparison(base: &ExchangerSetup, n: usize, seed: u64) -> SafetyReport {
    let p = &base.params;
    let poll_ticks = p.ticks(base.chart.polling_period).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = vec![];
    for _ in 0..n {
        let t0 = (rng.random_range(57.0..59.5) * 100.0_f64).round() / 100.0;
        let stop_at = crate::trace::clock_of(p.ticks(BENCH_BASE_S) + rng.random_range(0..poll_ticks), p.tick_dt);
        let s = hot_stop_setup(base, t0, stop_at);
        let a = run_exchanger(&s, Controller::Agent, seed).metrics.time_above_abnormal_s;
        let f = run_exchanger(&s, Controller::Sfc, seed).metrics.time_above_abnormal_s;
        cases.push(SafetyCase {
            initial_temperature: t0,
            stop_at,
            agent_above_s: a,
            sfc_above_s: f,
        });
    }
    SafetyReport {
        not_worse: cases.iter().filter(|c| c.agent_above_s <= c.sfc_above_s).count(),
        strictly_better: cases.iter().filter(|c| c.agent_above_s < c.sfc_above_s).count(),
        cases,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverrideCase {
    pub seed: u64,
    pub spike_tick: u64,
    /// A stop-handling intention was still running when the spike landed.
    pub interrupted: bool,
    /// Unprotected steps seen between the override event and its completion.
    pub unprotected_steps: usize,
    pub completed: bool,
}

/// Counts unprotected intention steps between the dequeue of the first
/// `+abnormal_temperature` event and the end of the intention it started.
pub fn override_window(records: &[TraceRecord]) -> (usize, bool) {
    let agent: Vec<&TraceRecord> = records.iter().filter(|r| r.source == "agent").collect();
    let Some(start) = agent
        .iter()
        .position(|r| r.kind == "event" && r.payload["event"] == "+abnormal_temperature")
    else {
        return (0, false);
    };
    let intention = agent[start..]
        .iter()
        .find(|r| r.kind == "plan-selected")
        .and_then(|r| r.payload["intention"].as_u64());
    let mut unprotected = 0;
    for r in &agent[start..] {
        if r.kind == "step" && r.payload["protected"] == false {
            unprotected += 1;
        }
        if r.kind == "intention-done" && r.payload["intention"].as_u64() == intention {
            return (unprotected, true);
        }
    }
    (unprotected, false)
}

/// Injects an abnormal spike while the agent is still working through the
/// compressor-stop plan, one seeded run per case.
pub fn override_check(base: &ExchangerSetup, seeds: std::ops::Range<u64>) -> Vec<OverrideCase> {
    let p = &base.params;
    let stop_at = 1.2;
    let percept_tick = p.ticks(stop_at + p.rundown_s);
    seeds
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spike_tick = percept_tick + rng.random_range(1..=4);
            let duration = (rng.random_range(0.5..5.0) * 10.0_f64).round() / 10.0;
            let mut s = base.clone();
            s.injections = vec![
                Injection::CompressorStop { at: stop_at },
                Injection::AbnormalSpike {
                    at: p.clock(spike_tick),
                    duration,
                },
            ];
            s.duration = p.clock(spike_tick) + duration + 10.0;
            let run = run_exchanger(&s, Controller::Agent, seed);
            let recs = run.trace.records();
            let (unprotected_steps, completed) = override_window(recs);
            OverrideCase {
                seed,
                spike_tick,
                interrupted: stop_plan_running_at(recs, spike_tick),
                unprotected_steps,
                completed,
            }
        })
        .collect()
}

/// True when an intention started by `+compressor_stopped` began before
/// `tick` and had not finished by then.
fn stop_plan_running_at(records: &[TraceRecord], tick: u64) -> bool {
    let Some(id) = records
        .iter()
        .find(|r| r.kind == "plan-selected" && r.payload["event"] == "+compressor_stopped" && r.tick < tick)
        .and_then(|r| r.payload["intention"].as_u64())
    else {
        return false;
    };
    !records.iter().any(|r| {
        r.tick < tick && matches!(r.kind.as_str(), "intention-done" | "intention-failed") && r.payload["intention"].as_u64() == Some(id)
    })
}
