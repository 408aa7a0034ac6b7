//! Polled sequential flow chart interpreter.
//!
//! ```text
//! chart stop_compression.
//! poll 5.                        // seconds between scans
//! initial idle.
//! alarm abnormal_T.              // transitions requiring this variable are scanned first
//! fault emergency_cooling.       // safe-state action if a scan cannot read a variable
//! var compressor_stopped, switch_on, under_operation, abnormal_T, temperature.
//!
//! step idle.
//! step take_control: take_valve; log_order(take_control).
//!
//! idle -> take_control: compressor_stopped and not abnormal_T.
//! take_control -> idle: temperature < 30 or not switch_on.
//! ```
//!
//! Guards are boolean expressions with `and`, `or`, `not`, parentheses and
//! numeric comparisons (`< <= > >= == !=`) between variables and numbers.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::syntax::{tokenize, Cursor, Pos, SyntaxError, Tok};
use crate::term::{parse_literal, Literal};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ChartError {
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error("{pos}: unknown step `{step}`")]
    UnknownStep { pos: Pos, step: String },
    #[error("{pos}: undeclared variable `{var}`")]
    UndeclaredVariable { pos: Pos, var: String },
    #[error("{pos}: step `{step}` declared twice")]
    DuplicateStep { pos: Pos, step: String },
    #[error("{0}")]
    Missing(String),
    #[error("poll period must be positive, got {0}")]
    BadPeriod(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Value {
    Bool(bool),
    Num(f64),
}

pub type VariableSnapshot = BTreeMap<String, Value>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Operand {
    Var(String),
    Num(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Guard {
    Var(String),
    Not(Box<Guard>),
    And(Vec<Guard>),
    Or(Vec<Guard>),
    Cmp(Operand, CmpOp, Operand),
    True,
}

/// Why a guard could not be evaluated.
#[derive(Debug, Clone, PartialEq)]
pub enum EvalFault {
    Missing(String),
    WrongType(String),
}

impl fmt::Display for EvalFault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalFault::Missing(v) => write!(f, "variable `{v}` missing from snapshot"),
            EvalFault::WrongType(v) => write!(f, "variable `{v}` has the wrong type"),
        }
    }
}

impl Guard {
    pub fn vars(&self, out: &mut Vec<String>) {
        match self {
            Guard::Var(v) => out.push(v.clone()),
            Guard::Not(g) => g.vars(out),
            Guard::And(gs) | Guard::Or(gs) => gs.iter().for_each(|g| g.vars(out)),
            Guard::Cmp(a, _, b) => {
                for o in [a, b] {
                    if let Operand::Var(v) = o {
                        out.push(v.clone());
                    }
                }
            }
            Guard::True => {}
        }
    }

    /// True when the guard can only hold if `var` is true.
    pub fn requires(&self, var: &str) -> bool {
        match self {
            Guard::Var(v) => v == var,
            Guard::And(gs) => gs.iter().any(|g| g.requires(var)),
            Guard::Or(gs) => !gs.is_empty() && gs.iter().all(|g| g.requires(var)),
            _ => false,
        }
    }

    pub fn eval(&self, snap: &VariableSnapshot) -> Result<bool, EvalFault> {
        match self {
            Guard::True => Ok(true),
            Guard::Var(v) => match snap.get(v) {
                Some(Value::Bool(b)) => Ok(*b),
                Some(Value::Num(_)) => Err(EvalFault::WrongType(v.clone())),
                None => Err(EvalFault::Missing(v.clone())),
            },
            Guard::Not(g) => Ok(!g.eval(snap)?),
            // every operand is evaluated so missing variables are never masked
            Guard::And(gs) => gs.iter().try_fold(true, |acc, g| Ok(g.eval(snap)? && acc)),
            Guard::Or(gs) => gs.iter().try_fold(false, |acc, g| Ok(g.eval(snap)? || acc)),
            Guard::Cmp(a, op, b) => {
                let (x, y) = (num(a, snap)?, num(b, snap)?);
                Ok(match op {
                    CmpOp::Lt => x < y,
                    CmpOp::Le => x <= y,
                    CmpOp::Gt => x > y,
                    CmpOp::Ge => x >= y,
                    CmpOp::Eq => x == y,
                    CmpOp::Ne => x != y,
                })
            }
        }
    }
}

fn num(o: &Operand, snap: &VariableSnapshot) -> Result<f64, EvalFault> {
    match o {
        Operand::Num(n) => Ok(*n),
        Operand::Var(v) => match snap.get(v) {
            Some(Value::Num(n)) => Ok(*n),
            Some(Value::Bool(_)) => Err(EvalFault::WrongType(v.clone())),
            None => Err(EvalFault::Missing(v.clone())),
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SfcStep {
    pub name: String,
    pub actions: Vec<Literal>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub from: String,
    pub to: String,
    pub guard: Guard,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SfcChart {
    pub name: String,
    pub steps: Vec<SfcStep>,
    pub transitions: Vec<Transition>,
    pub initial_step: String,
    pub polling_period: f64,
    pub variables: Vec<String>,
    pub alarm: Option<String>,
    pub fault_actions: Vec<Literal>,
}

impl SfcChart {
    pub fn step(&self, name: &str) -> Option<&SfcStep> {
        self.steps.iter().find(|s| s.name == name)
    }

    /// Transitions out of `step` in scan order: alarm-requiring ones first,
    /// then declaration order.
    pub fn scan_order(&self, step: &str) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.transitions.len())
            .filter(|i| self.transitions[*i].from == step)
            .collect();
        if let Some(alarm) = &self.alarm {
            idx.sort_by_key(|i| !self.transitions[*i].guard.requires(alarm));
        }
        idx
    }

    /// True when `now` (seconds) falls on a polling boundary anchored at 0.
    pub fn is_boundary(&self, now: f64) -> bool {
        let k = (now / self.polling_period).round();
        (now - k * self.polling_period).abs() <= 1e-6 * self.polling_period.max(1.0)
    }
}

pub fn load_chart(src: &str) -> Result<SfcChart, ChartError> {
    let mut cur = Cursor::new(tokenize(src)?);
    let mut name = None;
    let mut period = None;
    let mut initial: Option<(String, Pos)> = None;
    let mut alarm: Option<(String, Pos)> = None;
    let mut fault_actions = Vec::new();
    let mut variables: Vec<String> = Vec::new();
    let mut steps: Vec<SfcStep> = Vec::new();
    let mut transitions: Vec<(Transition, Pos)> = Vec::new();

    while !cur.is_done() {
        let pos = cur.pos();
        let word = cur.ident()?;
        if cur.peek() == Some(&Tok::RArrow) {
            cur.bump();
            let to = cur.ident()?;
            let guard = if cur.eat(&Tok::Colon) { parse_or(&mut cur)? } else { Guard::True };
            cur.expect(&Tok::Dot)?;
            transitions.push((Transition { from: word, to, guard }, pos));
            continue;
        }
        match word.as_str() {
            "chart" => name = Some(cur.ident()?),
            "poll" => {
                period = Some(match cur.bump() {
                    Some(Tok::Num(n)) => n,
                    _ => return Err(SyntaxError::new(pos, "poll expects a number of seconds").into()),
                })
            }
            "initial" => initial = Some((cur.ident()?, cur.pos())),
            "alarm" => alarm = Some((cur.ident()?, pos)),
            "fault" => fault_actions = parse_actions(&mut cur)?,
            "var" => loop {
                variables.push(cur.ident()?);
                if !cur.eat(&Tok::Comma) {
                    break;
                }
            },
            "step" => {
                let step = cur.ident()?;
                if steps.iter().any(|s| s.name == step) {
                    return Err(ChartError::DuplicateStep { pos, step });
                }
                let actions = if cur.eat(&Tok::Colon) { parse_actions(&mut cur)? } else { vec![] };
                steps.push(SfcStep { name: step, actions });
            }
            other => {
                return Err(SyntaxError::new(pos, format!("unknown declaration `{other}`")).into());
            }
        }
        cur.expect(&Tok::Dot)?;
    }

    let polling_period = period.ok_or_else(|| ChartError::Missing("missing `poll` declaration".into()))?;
    if !(polling_period > 0.0 && polling_period.is_finite()) {
        return Err(ChartError::BadPeriod(polling_period));
    }
    let (initial_step, ipos) = initial.ok_or_else(|| ChartError::Missing("missing `initial` declaration".into()))?;
    let has = |s: &str| steps.iter().any(|x| x.name == s);
    if !has(&initial_step) {
        return Err(ChartError::UnknownStep {
            pos: ipos,
            step: initial_step,
        });
    }
    for (t, pos) in &transitions {
        for s in [&t.from, &t.to] {
            if !has(s) {
                return Err(ChartError::UnknownStep {
                    pos: *pos,
                    step: s.clone(),
                });
            }
        }
        let mut vs = Vec::new();
        t.guard.vars(&mut vs);
        if let Some(var) = vs.into_iter().find(|v| !variables.contains(v)) {
            return Err(ChartError::UndeclaredVariable { pos: *pos, var });
        }
    }
    if let Some((var, pos)) = &alarm {
        if !variables.contains(var) {
            return Err(ChartError::UndeclaredVariable {
                pos: *pos,
                var: var.clone(),
            });
        }
    }
    Ok(SfcChart {
        name: name.unwrap_or_else(|| "chart".into()),
        steps,
        transitions: transitions.into_iter().map(|(t, _)| t).collect(),
        initial_step,
        polling_period,
        variables,
        alarm: alarm.map(|(a, _)| a),
        fault_actions,
    })
}

fn parse_actions(cur: &mut Cursor) -> Result<Vec<Literal>, SyntaxError> {
    let mut out = vec![parse_literal(cur)?];
    while cur.eat(&Tok::Semi) {
        out.push(parse_literal(cur)?);
    }
    Ok(out)
}

fn keyword(cur: &Cursor, w: &str) -> bool {
    matches!(cur.peek(), Some(Tok::Ident(x)) if x == w)
}

fn parse_or(cur: &mut Cursor) -> Result<Guard, SyntaxError> {
    let mut parts = vec![parse_and(cur)?];
    while keyword(cur, "or") {
        cur.bump();
        parts.push(parse_and(cur)?);
    }
    Ok(if parts.len() == 1 { parts.pop().unwrap() } else { Guard::Or(parts) })
}

fn parse_and(cur: &mut Cursor) -> Result<Guard, SyntaxError> {
    let mut parts = vec![parse_not(cur)?];
    while keyword(cur, "and") {
        cur.bump();
        parts.push(parse_not(cur)?);
    }
    Ok(if parts.len() == 1 { parts.pop().unwrap() } else { Guard::And(parts) })
}

fn parse_not(cur: &mut Cursor) -> Result<Guard, SyntaxError> {
    if keyword(cur, "not") {
        cur.bump();
        return Ok(Guard::Not(Box::new(parse_not(cur)?)));
    }
    if cur.eat(&Tok::LParen) {
        let g = parse_or(cur)?;
        cur.expect(&Tok::RParen)?;
        return Ok(g);
    }
    if keyword(cur, "true") {
        cur.bump();
        return Ok(Guard::True);
    }
    let lhs = parse_operand(cur)?;
    let op = match cur.peek() {
        Some(Tok::Lt) => CmpOp::Lt,
        Some(Tok::Le) => CmpOp::Le,
        Some(Tok::Gt) => CmpOp::Gt,
        Some(Tok::Ge) => CmpOp::Ge,
        Some(Tok::EqEq) => CmpOp::Eq,
        Some(Tok::Ne) => CmpOp::Ne,
        _ => {
            return match lhs {
                Operand::Var(v) => Ok(Guard::Var(v)),
                Operand::Num(_) => Err(cur.unexpected("comparison operator")),
            }
        }
    };
    cur.bump();
    let rhs = parse_operand(cur)?;
    Ok(Guard::Cmp(lhs, op, rhs))
}

fn parse_operand(cur: &mut Cursor) -> Result<Operand, SyntaxError> {
    let neg = cur.eat(&Tok::Minus);
    match cur.bump() {
        Some(Tok::Num(n)) => Ok(Operand::Num(if neg { -n } else { n })),
        Some(Tok::Ident(v)) if !neg => Ok(Operand::Var(v)),
        _ => Err(SyntaxError::new(cur.pos(), "expected variable or number")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChartState {
    pub active: String,
    pub halted: bool,
}

impl ChartState {
    pub fn new(chart: &SfcChart) -> Self {
        Self {
            active: chart.initial_step.clone(),
            halted: false,
        }
    }
}

/// What one scan did.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum PollRecord {
    Stay { step: String },
    Fired { from: String, to: String, transition: usize },
    Fault { step: String, reason: String },
}

/// Scans the chart if `now` is a polling boundary. Returns the actions to
/// emit and, on a boundary, a record of the scan.
pub fn poll_tick(
    chart: &SfcChart,
    state: &mut ChartState,
    snapshot: &VariableSnapshot,
    now: f64,
) -> (Vec<Literal>, Option<PollRecord>) {
    if state.halted || !chart.is_boundary(now) {
        return (vec![], None);
    }
    let order = chart.scan_order(&state.active);
    // every variable read by this step's guards must be present and well typed
    for &i in &order {
        if let Err(f) = chart.transitions[i].guard.eval(snapshot) {
            state.halted = true;
            let rec = PollRecord::Fault {
                step: state.active.clone(),
                reason: f.to_string(),
            };
            return (chart.fault_actions.clone(), Some(rec));
        }
    }
    for i in order {
        let t = &chart.transitions[i];
        if t.guard.eval(snapshot) == Ok(true) {
            let from = std::mem::replace(&mut state.active, t.to.clone());
            let actions = chart.step(&t.to).map(|s| s.actions.clone()).unwrap_or_default();
            return (
                actions,
                Some(PollRecord::Fired {
                    from,
                    to: t.to.clone(),
                    transition: i,
                }),
            );
        }
    }
    (
        vec![],
        Some(PollRecord::Stay {
            step: state.active.clone(),
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const CHART: &str = include_str!("../../../scenarios/exchanger/stop_compression.sfc");

    fn snap(stopped: bool, abnormal: bool) -> VariableSnapshot {
        let mut s = VariableSnapshot::new();
        s.insert("compressor_stopped".into(), Value::Bool(stopped));
        s.insert("switch_on".into(), Value::Bool(true));
        s.insert("under_operation".into(), Value::Bool(!abnormal));
        s.insert("abnormal_T".into(), Value::Bool(abnormal));
        s.insert("temperature".into(), Value::Num(45.0));
        s
    }

    #[test]
    fn shipped_chart_loads() {
        let c = load_chart(CHART).unwrap();
        let names: Vec<&str> = c.steps.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, vec!["idle", "take_control", "override"]);
        assert_eq!(c.polling_period, 5.0);
        assert_eq!(c.alarm.as_deref(), Some("abnormal_T"));
        let mut vs = vec![];
        for t in &c.transitions {
            t.guard.vars(&mut vs);
        }
        for v in ["compressor_stopped", "switch_on", "under_operation", "abnormal_T"] {
            assert!(vs.iter().any(|x| x == v), "{v}");
        }
    }

    #[test]
    fn unknown_step_is_named() {
        let err = load_chart("poll 5. initial a. step a. a -> b.").unwrap_err();
        assert!(matches!(&err, ChartError::UnknownStep { step, .. } if step == "b"), "{err}");
        assert!(err.to_string().starts_with("1:"));
    }

    #[test]
    fn undeclared_variable_is_named() {
        let err = load_chart("poll 5. initial a. step a. step b. a -> b: hot.").unwrap_err();
        assert!(matches!(err, ChartError::UndeclaredVariable { ref var, .. } if var == "hot"));
    }

    #[test]
    fn empty_chart_never_acts() {
        let c = load_chart("poll 5. initial idle. step idle.").unwrap();
        let mut st = ChartState::new(&c);
        for k in 0..100 {
            let (acts, _) = poll_tick(&c, &mut st, &VariableSnapshot::new(), k as f64 * 0.1);
            assert!(acts.is_empty());
        }
        assert!(!st.halted);
    }

    #[test]
    fn non_positive_period_rejected() {
        assert!(matches!(
            load_chart("poll 0. initial a. step a."),
            Err(ChartError::BadPeriod(_))
        ));
    }

    #[test]
    fn guard_grammar() {
        let c = load_chart(
            "poll 1. var a, b, x. initial s. step s. step t.\n\
             s -> t: not (a or b) and x >= -2.5.",
        )
        .unwrap();
        let g = &c.transitions[0].guard;
        let mut s = VariableSnapshot::new();
        s.insert("a".into(), Value::Bool(false));
        s.insert("b".into(), Value::Bool(false));
        s.insert("x".into(), Value::Num(-2.5));
        assert_eq!(g.eval(&s), Ok(true));
        s.insert("b".into(), Value::Bool(true));
        assert_eq!(g.eval(&s), Ok(false));
    }

    /// Steps 0.1 s ticks through `stop` and returns the clock of the first action.
    fn first_reaction(stop_tick: u64) -> Option<u64> {
        let c = load_chart(CHART).unwrap();
        let mut st = ChartState::new(&c);
        for k in 0..400u64 {
            let (acts, _) = poll_tick(&c, &mut st, &snap(k >= stop_tick, false), k as f64 * 0.1);
            if !acts.is_empty() {
                return Some(k);
            }
        }
        None
    }

    #[test]
    fn stop_at_1_2_detected_at_5_0() {
        let k = first_reaction(12).unwrap();
        assert_eq!(k, 50);
        // latency = 5.0 - 1.2
        assert!(((k - 12) as f64 * 0.1 - 3.8).abs() < 1e-9);
    }

    #[test]
    fn stop_on_boundary_detected_immediately() {
        assert_eq!(first_reaction(50), Some(50));
    }

    #[test]
    fn alarm_wins_over_take_control() {
        let c = load_chart(CHART).unwrap();
        let mut st = ChartState::new(&c);
        let (acts, rec) = poll_tick(&c, &mut st, &snap(true, true), 0.0);
        assert_eq!(st.active, "override");
        assert!(matches!(rec, Some(PollRecord::Fired { ref to, .. }) if to == "override"));
        assert!(acts.iter().any(|a| a.functor == "emergency_cooling"));
    }

    #[test]
    fn missing_variable_faults_and_halts() {
        let c = load_chart(CHART).unwrap();
        let mut st = ChartState::new(&c);
        let mut s = snap(true, false);
        s.remove("switch_on");
        let (acts, rec) = poll_tick(&c, &mut st, &s, 5.0);
        assert_eq!(acts, c.fault_actions);
        assert!(matches!(rec, Some(PollRecord::Fault { .. })));
        assert!(st.halted);
        let (acts, rec) = poll_tick(&c, &mut st, &snap(true, false), 10.0);
        assert!(acts.is_empty() && rec.is_none());
    }

    proptest! {
        #[test]
        fn latency_within_one_period(stop_tick in 0u64..300) {
            let k = first_reaction(stop_tick).unwrap();
            // oracle: first multiple of 50 ticks at or after the stop
            let expected = stop_tick.div_ceil(50) * 50;
            prop_assert_eq!(k, expected);
            let latency = (k - stop_tick) as f64 * 0.1;
            prop_assert!((0.0..5.0).contains(&latency));
        }

        #[test]
        fn off_boundary_scan_is_noop(k in 0u64..1000, stopped: bool, abnormal: bool) {
            prop_assume!(k % 50 != 0);
            let c = load_chart(CHART).unwrap();
            let mut st = ChartState::new(&c);
            let before = st.clone();
            let (acts, rec) = poll_tick(&c, &mut st, &snap(stopped, abnormal), k as f64 * 0.1);
            prop_assert!(acts.is_empty() && rec.is_none());
            prop_assert_eq!(st, before);
        }

        #[test]
        fn alarm_blocks_normal_actions(seq in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..30)) {
            let c = load_chart(CHART).unwrap();
            let mut st = ChartState::new(&c);
            for (i, (stopped, abnormal)) in seq.iter().enumerate() {
                let (acts, _) = poll_tick(&c, &mut st, &snap(*stopped, *abnormal), i as f64 * 5.0);
                if *abnormal {
                    prop_assert!(acts.iter().all(|a| c.step("override").unwrap().actions.contains(a)));
                }
            }
        }
    }
}
