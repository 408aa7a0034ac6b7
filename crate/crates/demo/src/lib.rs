//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export returns a JSON string. Failures come back as
//! `{"error": "..."}` so the page needs a single code path.

use agentplant_core::fuzzy::{defuzzify_centroid, infer};
use agentplant_core::harness::{bench_latency, run_exchanger, Controller, ExchangerSetup, Stats};
use agentplant_core::plant::{Injection, ValveOnStop};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const MAX_DURATION_S: f64 = 3600.0;
const MAX_TRIALS: u32 = 2000;
const MAX_GRID: u32 = 101;

fn controller(name: &str) -> Result<Controller, String> {
    match name {
        "agent" => Ok(Controller::Agent),
        "sfc" => Ok(Controller::Sfc),
        other => Err(format!("unknown controller `{other}`")),
    }
}

/// One closed-loop run with a compressor stop at `stop_at` seconds.
/// Samples are `[t, T, valve]` rows.
pub fn exchanger_run(controller_name: &str, stop_at: f64, duration: f64, close_valve: bool) -> Result<Value, String> {
    let c = controller(controller_name)?;
    if !(duration > 0.0 && duration <= MAX_DURATION_S) {
        return Err(format!("duration must be in (0, {MAX_DURATION_S}] s"));
    }
    if !(0.0..duration).contains(&stop_at) {
        return Err("stop time must fall inside the run".into());
    }
    let mut s = ExchangerSetup::shipped();
    s.duration = duration;
    s.injections = vec![Injection::CompressorStop { at: stop_at }];
    if close_valve {
        s.params.valve_on_stop = ValveOnStop::Close;
        // start hot so the transient can cross the abnormal line
        s.initial_temperature = 58.5;
    }
    let run = run_exchanger(&s, c, 0);
    let samples: Vec<[f64; 3]> = run
        .trace
        .records()
        .iter()
        .filter(|r| r.kind == "sample")
        .map(|r| {
            let f = |k: &str| r.payload[k].as_f64().unwrap_or(f64::NAN);
            [r.clock, f("T"), f("u")]
        })
        .collect();
    Ok(json!({
        "controller": c.name(),
        "t_abnormal": s.params.t_abnormal,
        "t_setpoint": s.params.t_setpoint,
        "samples": samples,
        "metrics": run.metrics,
    }))
}

/// Stabiliser output change over an `n` by `n` grid of (e, de).
pub fn stabiliser_surface(n: u32) -> Result<Value, String> {
    if !(2..=MAX_GRID).contains(&n) {
        return Err(format!("grid size must be in [2, {MAX_GRID}]"));
    }
    let rb = ExchangerSetup::shipped().rulebase;
    let axis = |lo: f64, hi: f64| -> Vec<f64> { (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect() };
    let e = axis(rb.e.lo, rb.e.hi);
    let de = axis(rb.de.lo, rb.de.hi);
    let du: Vec<Vec<f64>> = de
        .iter()
        .map(|&d| e.iter().map(|&x| defuzzify_centroid(&infer(&rb, x, d))).collect())
        .collect();
    Ok(json!({ "e": e, "de": de, "du": du, "du_range": [rb.du.lo, rb.du.hi] }))
}

/// Reaction latencies over `trials` random stop times, binned per
/// controller into `bins` equal slots over one polling period.
pub fn latency_bins(trials: u32, seed: u64, bins: u32) -> Result<Value, String> {
    if !(1..=MAX_TRIALS).contains(&trials) {
        return Err(format!("trials must be in [1, {MAX_TRIALS}]"));
    }
    if bins == 0 || bins > 100 {
        return Err("bins must be in [1, 100]".into());
    }
    let s = ExchangerSetup::shipped();
    let period = s.chart.polling_period;
    let r = bench_latency(&s, trials as usize, seed).map_err(|e| e.to_string())?;
    let hist = |xs: &[f64]| -> Vec<u32> {
        let mut h = vec![0; bins as usize];
        for &x in xs {
            let i = ((x / period) * bins as f64).floor() as usize;
            h[i.min(bins as usize - 1)] += 1;
        }
        h
    };
    let stats = |st: &Stats| json!({"mean": st.mean, "min": st.min, "max": st.max, "stddev": st.stddev});
    Ok(json!({
        "period": period,
        "bins": bins,
        "agent": { "counts": hist(&r.agent.samples), "stats": stats(&r.agent.stats) },
        "sfc": { "counts": hist(&r.sfc.samples), "stats": stats(&r.sfc.stats) },
    }))
}

fn to_json(r: Result<Value, String>) -> String {
    r.unwrap_or_else(|e| json!({ "error": e })).to_string()
}

#[wasm_bindgen]
pub fn simulate_exchanger(controller: &str, stop_at: f64, duration: f64, close_valve: bool) -> String {
    to_json(exchanger_run(controller, stop_at, duration, close_valve))
}

#[wasm_bindgen]
pub fn fuzzy_surface(n: u32) -> String {
    to_json(stabiliser_surface(n))
}

#[wasm_bindgen]
pub fn latency_histogram(trials: u32, seed: u64, bins: u32) -> String {
    to_json(latency_bins(trials, seed, bins))
}
