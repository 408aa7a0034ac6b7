use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use agentplant_cli::serve::{self, ServeOptions};
use agentplant_core::harness::{
    bench_latency, diff_traces, load_scenario, override_check, run_scenario, safety_comparison, verify_trace,
    ApproverKind, Scenario, Setup,
};
use agentplant_core::trace::parse_ndjson;
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

/// Agent and polled-chart control of a heat exchanger, and a lifting
/// workflow with human approval.
#[derive(Parser)]
#[command(name = "agentplant", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Experiment {
    /// Reaction latency to a compressor stop, both controllers.
    Latency,
    /// Time above T_abnormal over hot stop transients.
    Safety,
    /// Abnormal spikes landing during the agent's takeover.
    Override,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its trace and metrics.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Seeded experiments over many exchanger runs.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "latency")]
        experiment: Experiment,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a lifting scenario behind the approval HTTP interface.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        seed: Option<u64>,
        /// Milliseconds of wall-clock time per workflow tick.
        #[arg(long, default_value_t = 100)]
        tick_ms: u64,
        /// Write the trace and metrics here when the workflow ends.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute a run's metrics from its trace and compare.
    VerifyTrace {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Compare two traces record by record.
    DiffTrace { left: PathBuf, right: PathBuf },
}

fn load(config: &Path) -> Result<Scenario> {
    load_scenario(config).with_context(|| format!("loading {}", config.display()))
}

fn print(v: &Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json"));
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(v)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn run(config: &Path, seed: Option<u64>, out: &Path) -> Result<bool> {
    let sc = load(config)?;
    if let Setup::Lifting(l) = &sc.setup {
        if l.settings.approver == ApproverKind::Interactive {
            bail!("interactive approvals need `serve`");
        }
    }
    let seed = seed.unwrap_or(sc.config.seed);
    let output = run_scenario(&sc, seed)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for (name, text) in &output.traces {
        fs::write(out.join(name), text)?;
    }
    write_json(&out.join("metrics.json"), &output.metrics)?;
    print(&output.metrics);
    let names: Vec<&str> = output.traces.iter().map(|(n, _)| n.as_str()).collect();
    eprintln!("wrote {} and metrics.json to {}", names.join(", "), out.display());
    Ok(output.passed)
}

fn bench(config: &Path, trials: usize, seed: Option<u64>, experiment: Experiment, out: Option<&Path>) -> Result<bool> {
    let sc = load(config)?;
    let Setup::Exchanger(setup) = &sc.setup else {
        bail!("bench needs an exchanger scenario");
    };
    let seed = seed.unwrap_or(sc.config.seed);
    let (report, passed) = match experiment {
        Experiment::Latency => {
            let mut r = bench_latency(setup, trials, seed)?;
            let passed = r.passed();
            // keep the console readable; the file gets everything
            let full = serde_json::to_value(&r)?;
            r.stop_times.clear();
            r.agent.samples.clear();
            r.sfc.samples.clear();
            print(&serde_json::to_value(&r)?);
            (full, passed)
        }
        Experiment::Safety => {
            let r = safety_comparison(setup, trials, seed);
            let passed = r.not_worse == r.cases.len();
            let v = serde_json::to_value(&r)?;
            print(&json!({"cases": r.cases.len(), "not_worse": r.not_worse, "strictly_better": r.strictly_better}));
            (v, passed)
        }
        Experiment::Override => {
            let cases = override_check(setup, seed..seed + trials as u64);
            let clean = cases.iter().filter(|c| c.completed && c.unprotected_steps == 0).count();
            let interrupted = cases.iter().filter(|c| c.interrupted).count();
            print(&json!({"runs": cases.len(), "interrupted": interrupted, "clean": clean}));
            (json!({"cases": cases, "clean": clean, "interrupted": interrupted}), clean == cases.len())
        }
    };
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("bench.json"), &report)?;
    }
    Ok(passed)
}

fn serve_cmd(config: &Path, port: u16, seed: Option<u64>, tick_ms: u64, out: Option<PathBuf>) -> Result<bool> {
    let sc = load(config)?;
    if !matches!(sc.setup, Setup::Lifting(_)) {
        bail!("serve needs a lifting scenario");
    }
    let listener = serve::bind(port)?;
    let opts = ServeOptions {
        seed: seed.unwrap_or(sc.config.seed),
        tick: Duration::from_millis(tick_ms),
        out,
    };
    eprintln!("serving on http://{}", listener.local_addr()?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::from_std(listener)?;
        serve::serve(listener, sc, opts, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
    })?;
    Ok(true)
}

fn read_trace(p: &Path) -> Result<Vec<agentplant_core::trace::TraceRecord>> {
    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    parse_ndjson(&text).with_context(|| format!("parsing {}", p.display()))
}

fn verify(trace: &Path, metrics: Option<&Path>) -> Result<bool> {
    let records = read_trace(trace)?;
    let metrics: Option<Value> = match metrics {
        Some(p) => Some(serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?),
        None => None,
    };
    let report = verify_trace(&records, metrics.as_ref());
    print(&serde_json::to_value(&report)?);
    Ok(report.passed())
}

fn diff(left: &Path, right: &Path) -> Result<bool> {
    let d = diff_traces(&read_trace(left)?, &read_trace(right)?);
    print(&serde_json::to_value(&d)?);
    Ok(d.identical)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("AGENTPLANT_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, seed, out } => run(&config, seed, &out),
        Command::Bench {
            config,
            trials,
            seed,
            experiment,
            out,
        } => bench(&config, trials, seed, experiment, out.as_deref()),
        Command::Serve {
            config,
            port,
            seed,
            tick_ms,
            out,
        } => serve_cmd(&config, port, seed, tick_ms, out),
        Command::VerifyTrace { trace, metrics } => verify(&trace, metrics.as_deref()),
        Command::DiffTrace { left, right } => diff(&left, &right),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
