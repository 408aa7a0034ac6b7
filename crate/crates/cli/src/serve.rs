//! Service mode: runs a lifting workflow in the background and exposes its
//! proposals, decisions, trace stream and snapshot over HTTP.
//!
//! The workflow owns its thread. Outside decisions land on a shared desk
//! and are only read at tick boundaries, so a run is reproducible from its
//! decision log.

use std::collections::{BTreeMap, VecDeque};
use std::convert::Infallible;
use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use agentplant_core::harness::{build_workflow, LiftingSetup, Scenario, Setup};
use agentplant_core::lifting::{chatbot_parse, Actor, ApprovalDecision, ChatCommand, DecisionDesk, SubmitError, HELP};
use agentplant_core::mediation::{stub, Artifact, Fault, HttpTransport, STUB_NAMES};
use agentplant_core::trace::TraceRecord;
use anyhow::{bail, Context};
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures_util::stream::{self, Stream};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::watch;

use crate::http::UreqTransport;

pub const API_VERSION: &str = "1";

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

/// Every trace record published so far, with a wake-up for open streams.
pub struct Hub {
    records: Mutex<Vec<TraceRecord>>,
    len: watch::Sender<usize>,
    closed: AtomicBool,
}

impl Default for Hub {
    fn default() -> Self {
        Self {
            records: Mutex::new(vec![]),
            len: watch::channel(0).0,
            closed: AtomicBool::new(false),
        }
    }
}

impl Hub {
    pub fn publish(&self, r: TraceRecord) {
        let mut g = lock(&self.records);
        g.push(r);
        self.len.send_replace(g.len());
    }

    fn from(&self, cursor: usize) -> Vec<TraceRecord> {
        let g = lock(&self.records);
        g.get(cursor..).map(<[_]>::to_vec).unwrap_or_default()
    }

    /// Ends every open stream once it has drained.
    pub fn close(&self) {
        self.closed.store(true, Ordering::SeqCst);
        self.len.send_modify(|_| {});
    }
}

#[derive(Clone)]
struct AppState {
    desk: DecisionDesk,
    hub: Arc<Hub>,
    snapshot: Arc<Mutex<Value>>,
    artifacts: Arc<Mutex<BTreeMap<String, Box<dyn Artifact>>>>,
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub seed: u64,
    /// Wall-clock pause between workflow ticks.
    pub tick: Duration,
    /// Where to write the trace and metrics once the workflow ends.
    pub out: Option<PathBuf>,
}

fn error(status: StatusCode, msg: impl ToString) -> Response {
    (status, Json(json!({"api_version": API_VERSION, "error": msg.to_string()}))).into_response()
}

async fn proposals(State(s): State<AppState>) -> Json<Value> {
    let tick = lock(&s.snapshot)["tick"].clone();
    Json(json!({"api_version": API_VERSION, "tick": tick, "pending": s.desk.pending()}))
}

async fn snapshot(State(s): State<AppState>) -> Json<Value> {
    let mut v = lock(&s.snapshot).clone();
    v["api_version"] = json!(API_VERSION);
    Json(v)
}

/// A decision document, or a chat line typed by one of the humans.
#[derive(Deserialize)]
#[serde(untagged)]
enum DecisionBody {
    Decision(ApprovalDecision),
    Chat { actor: Actor, text: String },
}

async fn decisions(State(s): State<AppState>, Json(body): Json<Value>) -> Response {
    let d = match serde_json::from_value::<DecisionBody>(body) {
        Ok(DecisionBody::Decision(d)) => d,
        Ok(DecisionBody::Chat { actor, text }) => match chatbot_parse(&text) {
            ChatCommand::Status => {
                return Json(json!({"api_version": API_VERSION, "pending": s.desk.pending()})).into_response();
            }
            ChatCommand::Help { reason } => {
                let body = json!({"api_version": API_VERSION, "error": reason.unwrap_or_else(|| "help".into()), "help": HELP});
                return (StatusCode::UNPROCESSABLE_ENTITY, Json(body)).into_response();
            }
            cmd => cmd.decision(actor).expect("accept and contest are decisions"),
        },
        Err(e) => return error(StatusCode::UNPROCESSABLE_ENTITY, format!("not a decision: {e}")),
    };
    match s.desk.submit(d.clone()) {
        Ok(()) => (
            StatusCode::ACCEPTED,
            Json(json!({"api_version": API_VERSION, "status": "queued", "decision": d})),
        )
            .into_response(),
        Err(e @ SubmitError::NotFound(_)) => error(StatusCode::NOT_FOUND, e),
        Err(e @ SubmitError::Stale(..)) => error(StatusCode::CONFLICT, e),
        Err(e @ SubmitError::Invalid(_)) => error(StatusCode::UNPROCESSABLE_ENTITY, e),
    }
}

#[derive(Deserialize)]
struct EventsQuery {
    /// Sequence number of the last record the client already has.
    since: Option<u64>,
}

fn record_stream(hub: Arc<Hub>, cursor: usize) -> impl Stream<Item = Result<Event, Infallible>> {
    let rx = hub.len.subscribe();
    stream::unfold((hub, cursor, rx, VecDeque::<TraceRecord>::new()), |(hub, mut cursor, mut rx, mut buf)| async move {
        loop {
            if let Some(r) = buf.pop_front() {
                let ev = Event::default()
                    .id(r.seq.to_string())
                    .event("record")
                    .data(serde_json::to_string(&r).expect("records serialize"));
                return Some((Ok(ev), (hub, cursor, rx, buf)));
            }
            rx.borrow_and_update();
            let fresh = hub.from(cursor);
            if fresh.is_empty() {
                if hub.closed.load(Ordering::SeqCst) || rx.changed().await.is_err() {
                    return None;
                }
                continue;
            }
            cursor += fresh.len();
            buf.extend(fresh);
        }
    })
}

async fn events(State(s): State<AppState>, Query(q): Query<EventsQuery>, headers: HeaderMap) -> Response {
    let last = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok())
        .or(q.since);
    let cursor = last.map_or(0, |n| n as usize + 1);
    Sse::new(record_stream(s.hub.clone(), cursor))
        .keep_alive(KeepAlive::default())
        .into_response()
}

async fn artifact(State(s): State<AppState>, Path((name, op)): Path<(String, String)>, Json(body): Json<Value>) -> Response {
    let mut arts = lock(&s.artifacts);
    let Some(a) = arts.get_mut(&name) else {
        let f = Fault {
            code: "unknown_artifact".into(),
            message: format!("no artifact `{name}`"),
        };
        return (StatusCode::NOT_FOUND, Json(f)).into_response();
    };
    match a.invoke(&op, &body) {
        Ok(v) => Json(v).into_response(),
        Err(f) => (StatusCode::UNPROCESSABLE_ENTITY, Json(f)).into_response(),
    }
}

fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/v1/proposals", get(proposals))
        .route("/api/v1/decisions", post(decisions))
        .route("/api/v1/events", get(events))
        .route("/api/v1/snapshot", get(snapshot))
        .route("/artifacts/{name}/{op}", post(artifact))
        .with_state(state)
}

fn write_outputs(dir: &std::path::Path, trace: &str, metrics: &Value) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("trace.ndjson"), trace)?;
    std::fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(metrics)?)?;
    Ok(())
}

fn start_workflow(
    setup: &LiftingSetup,
    opts: &ServeOptions,
    state: &AppState,
    stop: Arc<AtomicBool>,
) -> anyhow::Result<JoinHandle<()>> {
    let transport: Option<Box<dyn HttpTransport>> = match setup.settings.endpoints.is_empty() {
        true => None,
        false => Some(Box::new(UreqTransport)),
    };
    let mut wf = build_workflow(setup, opts.seed, Some(state.desk.clone()), transport)?;
    let hub = state.hub.clone();
    wf.trace_mut().set_listener(move |r| hub.publish(r.clone()));
    *lock(&state.snapshot) = wf.snapshot();
    let snap = state.snapshot.clone();
    let (tick, out) = (opts.tick, opts.out.clone());
    Ok(std::thread::spawn(move || {
        while !stop.load(Ordering::SeqCst) {
            wf.step();
            *lock(&snap) = wf.snapshot();
            if wf.is_finished() {
                log::info!("workflow finished at tick {}: {:?}", wf.current_tick(), wf.outcome());
                break;
            }
            std::thread::sleep(tick);
        }
        if let Some(dir) = out {
            let metrics = serde_json::to_value(wf.metrics()).expect("metrics serialize");
            if let Err(e) = write_outputs(&dir, &wf.trace().to_ndjson(), &metrics) {
                log::error!("writing outputs to {}: {e}", dir.display());
            }
        }
    }))
}

/// Serves until `shutdown` resolves. The workflow starts immediately.
pub async fn serve(
    listener: tokio::net::TcpListener,
    scenario: Scenario,
    opts: ServeOptions,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> anyhow::Result<()> {
    let Setup::Lifting(setup) = &scenario.setup else {
        bail!("serve needs a lifting scenario");
    };
    let artifacts = STUB_NAMES
        .iter()
        .map(|n| (n.to_string(), stub(n, &setup.reservoir, setup.settings.agency_faults).expect("stub")))
        .collect();
    let state = AppState {
        desk: DecisionDesk::new(),
        hub: Arc::new(Hub::default()),
        snapshot: Arc::new(Mutex::new(Value::Null)),
        artifacts: Arc::new(Mutex::new(artifacts)),
    };
    let stop = Arc::new(AtomicBool::new(false));
    let runner = start_workflow(setup, &opts, &state, stop.clone())?;
    let hub = state.hub.clone();
    let result = axum::serve(listener, router(state))
        .with_graceful_shutdown(async move {
            shutdown.await;
            hub.close();
        })
        .await;
    stop.store(true, Ordering::SeqCst);
    runner.join().ok();
    result.context("http server")
}

/// A server running on its own thread, for tests and embedding.
pub struct RunningServer {
    pub addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<JoinHandle<anyhow::Result<()>>>,
}

impl RunningServer {
    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }

    pub fn stop(mut self) -> anyhow::Result<()> {
        self.shutdown.take().map(|s| s.send(()));
        match self.thread.take().map(|t| t.join()) {
            Some(Ok(r)) => r,
            Some(Err(_)) => bail!("server thread panicked"),
            None => Ok(()),
        }
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        if let Some(s) = self.shutdown.take() {
            let _ = s.send(());
        }
    }
}

/// Binds the listener up front so a busy port fails here, not later.
pub fn bind(port: u16) -> anyhow::Result<std::net::TcpListener> {
    let l = std::net::TcpListener::bind(("127.0.0.1", port)).with_context(|| format!("cannot listen on port {port}"))?;
    l.set_nonblocking(true)?;
    Ok(l)
}

pub fn spawn(listener: std::net::TcpListener, scenario: Scenario, opts: ServeOptions) -> anyhow::Result<RunningServer> {
    let addr = listener.local_addr()?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let thread = std::thread::spawn(move || -> anyhow::Result<()> {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener)?;
            serve(listener, scenario, opts, async move {
                let _ = rx.await;
            })
            .await
        })
    });
    Ok(RunningServer {
        addr,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}
