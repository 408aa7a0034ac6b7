//! One heat-exchanger/compressor stage as a lumped first-order thermal model.
//!
//! `T += dt * (q - k*u*(T - T_cool)) / C`, explicit Euler. The heat input `q`
//! depends on the compressor: `q_run` while running, an exponential decay
//! towards `q_stop` while stopping, `q_stop` once stopped. The compressor
//! stays in `stopping` for `rundown_s` seconds before reporting stopped.

use serde::{Deserialize, Serialize};

use crate::agent::BeliefChange;
use crate::term::Literal;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlantError {
    #[error("invalid plant parameters: {0}")]
    InvalidParams(String),
    #[error("invalid initial state: {0}")]
    InvalidState(String),
    #[error("injection {event} at {at_s} s is in the past (clock {clock_s} s)")]
    InPast { event: String, at_s: f64, clock_s: f64 },
    #[error("injection {0} has a negative or non-finite time")]
    BadTime(String),
}

/// What happens to the valve when the compressor begins to stop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValveOnStop {
    /// The upstream temperature controller keeps its last output.
    #[default]
    Hold,
    /// The upstream controller trips and the valve fails closed.
    Close,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantParams {
    pub heat_capacity: f64,
    pub cooling_gain: f64,
    pub coolant_temp: f64,
    pub q_run: f64,
    pub q_stop: f64,
    pub stop_decay_tau: f64,
    pub tick_dt: f64,
    pub t_abnormal: f64,
    pub t_setpoint: f64,
    /// Seconds between the stop command and the compressor reporting stopped.
    pub rundown_s: f64,
    pub valve_on_stop: ValveOnStop,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            heat_capacity: 10.0,
            cooling_gain: 0.5,
            coolant_temp: 25.0,
            q_run: 8.0,
            q_stop: 1.0,
            stop_decay_tau: 20.0,
            tick_dt: 0.1,
            t_abnormal: 60.0,
            t_setpoint: 45.0,
            rundown_s: 10.0,
            valve_on_stop: ValveOnStop::Hold,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<(), PlantError> {
        let bad = |m: &str| Err(PlantError::InvalidParams(m.into()));
        let all = [
            self.heat_capacity,
            self.cooling_gain,
            self.coolant_temp,
            self.q_run,
            self.q_stop,
            self.stop_decay_tau,
            self.tick_dt,
            self.t_abnormal,
            self.t_setpoint,
            self.rundown_s,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("all parameters must be finite");
        }
        if self.heat_capacity <= 0.0 || self.cooling_gain <= 0.0 || self.tick_dt <= 0.0 {
            return bad("heat_capacity, cooling_gain and tick_dt must be positive");
        }
        if !(self.q_run > self.q_stop && self.q_stop >= 0.0) {
            return bad("need q_run > q_stop >= 0");
        }
        if !(self.t_abnormal > self.t_setpoint && self.t_setpoint > self.coolant_temp) {
            return bad("need t_abnormal > t_setpoint > coolant_temp");
        }
        if self.stop_decay_tau <= 0.0 || self.rundown_s < 0.0 {
            return bad("stop_decay_tau must be positive and rundown_s non-negative");
        }
        Ok(())
    }

    /// Converts seconds to the nearest tick index.
    pub fn ticks(&self, seconds: f64) -> u64 {
        (seconds / self.tick_dt).round().max(0.0) as u64
    }

    pub fn clock(&self, tick: u64) -> f64 {
        tick as f64 * self.tick_dt
    }

    /// Valve opening that holds `temp` in equilibrium while running.
    pub fn equilibrium_valve(&self, temp: f64) -> f64 {
        (self.q_run / (self.cooling_gain * (temp - self.coolant_temp))).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Compressor {
    Running,
    Stopping,
    Stopped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Switch {
    Open,
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CondOp {
    Normal,
    Abnormal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlantState {
    pub temp: f64,
    pub valve: f64,
    pub compressor: Compressor,
    pub stop_elapsed: f64,
    pub switch: Switch,
    pub cond_op: CondOp,
    pub tick: u64,
    pub clock: f64,
}

impl PlantState {
    /// Running compressor at `temp` with the valve at its equilibrium opening.
    pub fn steady(params: &PlantParams, temp: f64) -> Self {
        Self {
            temp,
            valve: params.equilibrium_valve(temp),
            compressor: Compressor::Running,
            stop_elapsed: 0.0,
            switch: Switch::Open,
            cond_op: CondOp::Normal,
            tick: 0,
            clock: 0.0,
        }
    }

    fn validate(&self) -> Result<(), PlantError> {
        if !self.temp.is_finite() {
            return Err(PlantError::InvalidState("temperature must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.valve) {
            return Err(PlantError::InvalidState("valve must lie in [0, 1]".into()));
        }
        if self.compressor != Compressor::Stopping && self.stop_elapsed != 0.0 {
            return Err(PlantError::InvalidState("stop_elapsed must be 0 unless stopping".into()));
        }
        Ok(())
    }
}

/// Heat input at the current compressor state.
pub fn heat_input(state: &PlantState, p: &PlantParams) -> f64 {
    match state.compressor {
        Compressor::Running => p.q_run,
        Compressor::Stopping => p.q_stop + (p.q_run - p.q_stop) * (-state.stop_elapsed / p.stop_decay_tau).exp(),
        Compressor::Stopped => p.q_stop,
    }
}

/// One explicit-Euler step of the thermal model.
pub fn step(state: &PlantState, p: &PlantParams) -> PlantState {
    let q = heat_input(state, p);
    let mut next = state.clone();
    next.temp = state.temp + p.tick_dt * (q - p.cooling_gain * state.valve * (state.temp - p.coolant_temp)) / p.heat_capacity;
    next.tick = state.tick + 1;
    next.clock = p.clock(next.tick);
    if state.compressor == Compressor::Stopping {
        next.stop_elapsed = state.stop_elapsed + p.tick_dt;
    }
    next
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Injection {
    CompressorStop { at: f64 },
    CompressorStart { at: f64 },
    AbnormalSpike { at: f64, duration: f64 },
}

impl Injection {
    pub fn at(&self) -> f64 {
        match *self {
            Injection::CompressorStop { at } | Injection::CompressorStart { at } | Injection::AbnormalSpike { at, .. } => at,
        }
    }

    pub fn name(&self) -> String {
        match *self {
            Injection::CompressorStop { at } => format!("compressor_stop({at})"),
            Injection::CompressorStart { at } => format!("compressor_start({at})"),
            Injection::AbnormalSpike { at, duration } => format!("abnormal_spike({at}, {duration})"),
        }
    }
}

/// Something the plant did on its own during a tick, for the trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "note", rename_all = "snake_case")]
pub enum PlantNote {
    Injected { event: String },
    NoOp { event: String, reason: String },
    CompressorState { state: Compressor },
    SpikeEnded,
    ValveFailedClosed,
    ValveCommand { requested: f64, applied: f64 },
    ValveCommandIgnored { requested: String },
}

/// The sensor view the controllers see.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SensorSnapshot {
    pub temperature: f64,
    pub valve: f64,
    pub compressor_stopped: bool,
    pub switch_open: bool,
    pub cond_op_normal: bool,
    pub abnormal_temperature: bool,
}

impl SensorSnapshot {
    /// The snapshot expressed as ground beliefs.
    pub fn beliefs(&self) -> Vec<Literal> {
        let mut out = vec![
            Literal::new("switch", vec![atom(if self.switch_open { "open" } else { "closed" })]),
            Literal::new("cond_op", vec![atom(if self.cond_op_normal { "normal" } else { "abnormal" })]),
        ];
        if self.compressor_stopped {
            out.push(Literal::atom("compressor_stopped"));
        }
        if self.abnormal_temperature {
            out.push(Literal::atom("abnormal_temperature"));
        }
        out
    }
}

fn atom(s: &str) -> crate::term::Term {
    crate::term::Term::atom(s)
}

/// Belief-level difference between two snapshots; removals come first.
pub fn sensor_delta(before: &SensorSnapshot, after: &SensorSnapshot) -> Vec<BeliefChange> {
    let old = before.beliefs();
    let new = after.beliefs();
    let mut out: Vec<BeliefChange> = old
        .iter()
        .filter(|b| !new.contains(b))
        .map(|b| BeliefChange::remove(b.clone()))
        .collect();
    out.extend(new.iter().filter(|b| !old.contains(b)).map(|b| BeliefChange::add(b.clone())));
    out
}

/// A plant with its injection schedule and one-tick actuator delay.
#[derive(Debug, Clone)]
pub struct Plant {
    params: PlantParams,
    state: PlantState,
    scheduled: Vec<(u64, Injection)>,
    pending_valve: Option<f64>,
    spike_until: Option<u64>,
    last_read: SensorSnapshot,
}

impl Plant {
    pub fn new(params: PlantParams, state: PlantState) -> Result<Self, PlantError> {
        params.validate()?;
        state.validate()?;
        let mut plant = Self {
            params,
            state,
            scheduled: Vec::new(),
            pending_valve: None,
            spike_until: None,
            last_read: SensorSnapshot {
                temperature: 0.0,
                valve: 0.0,
                compressor_stopped: false,
                switch_open: true,
                cond_op_normal: true,
                abnormal_temperature: false,
            },
        };
        plant.last_read = plant.snapshot();
        Ok(plant)
    }

    pub fn params(&self) -> &PlantParams {
        &self.params
    }

    pub fn state(&self) -> &PlantState {
        &self.state
    }

    pub fn tick(&self) -> u64 {
        self.state.tick
    }

    /// Schedules a scripted event. Events due at the current tick are still
    /// accepted if [`Plant::begin_tick`] has not run yet.
    pub fn inject(&mut self, event: Injection) -> Result<(), PlantError> {
        let at = event.at();
        let duration_ok = match event {
            Injection::AbnormalSpike { duration, .. } => duration.is_finite() && duration >= 0.0,
            _ => true,
        };
        if !at.is_finite() || at < 0.0 || !duration_ok {
            return Err(PlantError::BadTime(event.name()));
        }
        let tick = self.params.ticks(at);
        if tick < self.state.tick {
            return Err(PlantError::InPast {
                event: event.name(),
                at_s: at,
                clock_s: self.state.clock,
            });
        }
        // stable by due tick so same-tick events keep script order
        let idx = self.scheduled.partition_point(|(t, _)| *t <= tick);
        self.scheduled.insert(idx, (tick, event));
        Ok(())
    }

    /// Requests a valve opening; it takes effect from the next step.
    pub fn actuate_valve(&mut self, commanded: f64) -> PlantNote {
        if !commanded.is_finite() {
            log::warn!("ignoring non-finite valve command {commanded}");
            return PlantNote::ValveCommandIgnored {
                requested: commanded.to_string(),
            };
        }
        let applied = commanded.clamp(0.0, 1.0);
        self.pending_valve = Some(applied);
        PlantNote::ValveCommand {
            requested: commanded,
            applied,
        }
    }

    /// The valve opening that will be in force for the next step.
    pub fn commanded_valve(&self) -> f64 {
        self.pending_valve.unwrap_or(self.state.valve)
    }

    /// Applies due injections and compressor transitions for the current tick.
    pub fn begin_tick(&mut self) -> Vec<PlantNote> {
        let mut notes = Vec::new();
        let now = self.state.tick;
        if self.spike_until.is_some_and(|end| end <= now) {
            self.spike_until = None;
            self.state.cond_op = CondOp::Normal;
            notes.push(PlantNote::SpikeEnded);
        }
        while self.scheduled.first().is_some_and(|(t, _)| *t <= now) {
            let (_, ev) = self.scheduled.remove(0);
            self.apply(ev, &mut notes);
        }
        if self.state.compressor == Compressor::Stopping
            && self.state.stop_elapsed + 1e-9 >= self.params.rundown_s
        {
            self.state.compressor = Compressor::Stopped;
            self.state.stop_elapsed = 0.0;
            notes.push(PlantNote::CompressorState {
                state: Compressor::Stopped,
            });
        }
        notes
    }

    fn apply(&mut self, ev: Injection, notes: &mut Vec<PlantNote>) {
        let event = ev.name();
        match ev {
            Injection::CompressorStop { .. } => {
                if self.state.compressor != Compressor::Running {
                    notes.push(PlantNote::NoOp {
                        event,
                        reason: "compressor already stopping or stopped".into(),
                    });
                    return;
                }
                self.state.compressor = Compressor::Stopping;
                self.state.stop_elapsed = 0.0;
                notes.push(PlantNote::Injected { event });
                notes.push(PlantNote::CompressorState {
                    state: Compressor::Stopping,
                });
                if self.params.valve_on_stop == ValveOnStop::Close {
                    self.state.valve = 0.0;
                    self.pending_valve = None;
                    notes.push(PlantNote::ValveFailedClosed);
                }
            }
            Injection::CompressorStart { .. } => {
                if self.state.compressor == Compressor::Running {
                    log::info!("{event}: compressor already running");
                    notes.push(PlantNote::NoOp {
                        event,
                        reason: "compressor already running".into(),
                    });
                    return;
                }
                self.state.compressor = Compressor::Running;
                self.state.stop_elapsed = 0.0;
                notes.push(PlantNote::Injected { event });
                notes.push(PlantNote::CompressorState {
                    state: Compressor::Running,
                });
            }
            Injection::AbnormalSpike { duration, .. } => {
                let end = self.state.tick + self.params.ticks(duration);
                self.spike_until = Some(self.spike_until.map_or(end, |e| e.max(end)));
                self.state.cond_op = CondOp::Abnormal;
                notes.push(PlantNote::Injected { event });
                if self.spike_until == Some(self.state.tick) {
                    self.spike_until = None;
                    self.state.cond_op = CondOp::Normal;
                    notes.push(PlantNote::SpikeEnded);
                }
            }
        }
    }

    pub fn snapshot(&self) -> SensorSnapshot {
        SensorSnapshot {
            temperature: self.state.temp,
            valve: self.state.valve,
            compressor_stopped: self.state.compressor == Compressor::Stopped,
            switch_open: self.state.switch == Switch::Open,
            cond_op_normal: self.state.cond_op == CondOp::Normal,
            abnormal_temperature: self.state.temp >= self.params.t_abnormal || self.spike_until.is_some(),
        }
    }

    /// Belief changes since the previous read.
    pub fn read_sensors(&mut self) -> Vec<BeliefChange> {
        let now = self.snapshot();
        let delta = sensor_delta(&self.last_read, &now);
        self.last_read = now;
        delta
    }

    /// Integrates one tick, then latches any pending valve command.
    pub fn step(&mut self) {
        self.state = step(&self.state, &self.params);
        if let Some(u) = self.pending_valve.take() {
            self.state.valve = u;
        }
    }
}
