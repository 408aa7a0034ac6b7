//! Goal schemes: a tree of role-assigned goals with sequence or parallel
//! composition, plus the runtime state a coordinator keeps for it.
//!
//! Scheme documents are line based:
//!
//! ```text
//! # comment
//! scheme lifting
//! roles modeller optimiser
//! goal root compose=sequence "Do the whole thing"
//! goal first parent=root role=modeller task=fetch(data) "Fetch data"
//! goal second parent=root role=optimiser "Optimise"
//! ```
//!
//! Children keep document order. `task` defaults to the goal id. The
//! canonical form (what [`GoalScheme::canonical`] prints and the version
//! hash covers) lists goals in depth-first pre-order with defaults omitted.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use indexmap::IndexMap;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::term::Literal;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SchemeError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: goal id `{id}` used twice")]
    DuplicateGoal { line: usize, id: String },
    #[error("goal `{goal}` names unknown role `{role}`")]
    UnknownRole { goal: String, role: String },
    #[error("goal `{goal}` names unknown parent `{parent}`")]
    UnknownParent { goal: String, parent: String },
    #[error("scheme has {0} roots, expected exactly one")]
    Roots(usize),
    #[error("goals {0:?} are not reachable from the root (cycle)")]
    Cycle(Vec<String>),
    #[error("leaf goal `{0}` has no responsible role")]
    LeafWithoutRole(String),
    #[error("unknown goal `{0}`")]
    UnknownGoal(String),
    #[error("position {position} is out of range for `{parent}` with {len} children")]
    BadPosition { parent: String, position: usize, len: usize },
    #[error("role `{role}` is already committed to `{agent}`")]
    AlreadyCommitted { role: String, agent: String },
    #[error("role `{0}` does not exist")]
    NoSuchRole(String),
    #[error("goal `{goal}` is {from}; cannot become {to}")]
    IllegalTransition { goal: String, from: GoalStatus, to: GoalStatus },
    #[error("goal `{0}` is composite; its status follows its children")]
    Composite(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Composition {
    #[default]
    Sequence,
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Goal {
    pub id: String,
    pub description: String,
    pub role: Option<String>,
    pub composition: Composition,
    pub task: Literal,
    pub parent: Option<String>,
    pub children: Vec<String>,
}

impl Goal {
    pub fn leaf(id: &str, role: &str, description: &str) -> Self {
        Self {
            id: id.into(),
            description: description.into(),
            role: Some(role.into()),
            composition: Composition::Sequence,
            task: Literal::atom(id),
            parent: None,
            children: vec![],
        }
    }

    pub fn with_task(mut self, task: Literal) -> Self {
        self.task = task;
        self
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoalScheme {
    pub name: String,
    pub roles: Vec<String>,
    pub root: String,
    goals: IndexMap<String, Goal>,
    version: String,
}

impl GoalScheme {
    pub fn goal(&self, id: &str) -> Option<&Goal> {
        self.goals.get(id)
    }

    pub fn goals(&self) -> impl Iterator<Item = &Goal> {
        self.goals.values()
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    /// Goals in depth-first pre-order.
    pub fn preorder(&self) -> Vec<&Goal> {
        let mut out = Vec::with_capacity(self.goals.len());
        let mut stack = vec![self.root.as_str()];
        while let Some(id) = stack.pop() {
            let g = &self.goals[id];
            out.push(g);
            stack.extend(g.children.iter().rev().map(String::as_str));
        }
        out
    }

    pub fn leaves(&self) -> Vec<&Goal> {
        self.preorder().into_iter().filter(|g| g.is_leaf()).collect()
    }

    pub fn ancestors(&self, id: &str) -> Vec<&str> {
        let mut out = vec![];
        let mut cur = self.goals.get(id).and_then(|g| g.parent.as_deref());
        while let Some(p) = cur {
            out.push(p);
            cur = self.goals[p].parent.as_deref();
        }
        out
    }

    pub fn canonical(&self) -> String {
        let mut s = String::new();
        writeln!(s, "scheme {}", self.name).unwrap();
        writeln!(s, "roles {}", self.roles.join(" ")).unwrap();
        for g in self.preorder() {
            write!(s, "goal {}", g.id).unwrap();
            if let Some(p) = &g.parent {
                write!(s, " parent={p}").unwrap();
            }
            if let Some(r) = &g.role {
                write!(s, " role={r}").unwrap();
            }
            if g.composition == Composition::Parallel {
                s.push_str(" compose=parallel");
            }
            if g.task != Literal::atom(&g.id) {
                write!(s, " task={}", g.task).unwrap();
            }
            writeln!(s, " \"{}\"", g.description).unwrap();
        }
        s
    }

    fn rehash(&mut self) {
        self.version = hex::encode(Sha256::digest(self.canonical().as_bytes()));
    }

    /// Returns a new scheme with `goal` spliced into `parent`'s children.
    pub fn insert_subgoal(&self, parent: &str, position: usize, goal: Goal) -> Result<GoalScheme, SchemeError> {
        let p = self.goals.get(parent).ok_or_else(|| SchemeError::UnknownGoal(parent.into()))?;
        if self.goals.contains_key(&goal.id) {
            return Err(SchemeError::DuplicateGoal { line: 0, id: goal.id });
        }
        if position > p.children.len() {
            return Err(SchemeError::BadPosition {
                parent: parent.into(),
                position,
                len: p.children.len(),
            });
        }
        match &goal.role {
            Some(r) if !self.roles.contains(r) => {
                return Err(SchemeError::UnknownRole {
                    goal: goal.id,
                    role: r.clone(),
                })
            }
            None => return Err(SchemeError::LeafWithoutRole(goal.id)),
            _ => {}
        }
        let mut next = self.clone();
        let id = goal.id.clone();
        next.goals.insert(
            id.clone(),
            Goal {
                parent: Some(parent.into()),
                children: vec![],
                ..goal
            },
        );
        next.goals[parent].children.insert(position, id);
        next.rehash();
        Ok(next)
    }
}

impl fmt::Display for GoalScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical())
    }
}

pub fn load_scheme(src: &str) -> Result<GoalScheme, SchemeError> {
    let mut name = None;
    let mut roles: Vec<String> = vec![];
    let mut goals: IndexMap<String, Goal> = IndexMap::new();
    for (i, raw) in src.lines().enumerate() {
        let line = i + 1;
        let text = raw.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let err = |m: &str| SchemeError::Parse {
            line,
            message: m.into(),
        };
        let (head, rest) = text.split_once(char::is_whitespace).unwrap_or((text, ""));
        match head {
            "scheme" => name = Some(rest.trim().to_string()),
            "roles" => roles.extend(rest.split_whitespace().map(String::from)),
            "goal" => {
                let (fields, description) = match rest.find('"') {
                    Some(q) => {
                        let d = &rest[q + 1..];
                        let d = d.strip_suffix('"').ok_or_else(|| err("unterminated description"))?;
                        if d.contains('"') {
                            return Err(err("description may not contain quotes"));
                        }
                        (&rest[..q], d.to_string())
                    }
                    None => (rest, String::new()),
                };
                let mut parts = fields.split_whitespace();
                let id = parts.next().ok_or_else(|| err("goal needs an id"))?.to_string();
                let mut goal = Goal {
                    id: id.clone(),
                    description,
                    role: None,
                    composition: Composition::Sequence,
                    task: Literal::atom(&id),
                    parent: None,
                    children: vec![],
                };
                for kv in parts {
                    let (k, v) = kv.split_once('=').ok_or_else(|| err(&format!("expected key=value, found `{kv}`")))?;
                    match k {
                        "parent" => goal.parent = Some(v.into()),
                        "role" => goal.role = Some(v.into()),
                        "compose" => {
                            goal.composition = match v {
                                "sequence" => Composition::Sequence,
                                "parallel" => Composition::Parallel,
                                _ => return Err(err(&format!("unknown composition `{v}`"))),
                            }
                        }
                        "task" => goal.task = Literal::parse(v).map_err(|e| err(&e.message))?,
                        _ => return Err(err(&format!("unknown key `{k}`"))),
                    }
                }
                if goals.contains_key(&id) {
                    return Err(SchemeError::DuplicateGoal { line, id });
                }
                goals.insert(id, goal);
            }
            _ => return Err(err(&format!("unknown directive `{head}`"))),
        }
    }

    let ids: Vec<String> = goals.keys().cloned().collect();
    for id in &ids {
        let g = &goals[id];
        if let Some(r) = &g.role {
            if !roles.contains(r) {
                return Err(SchemeError::UnknownRole {
                    goal: id.clone(),
                    role: r.clone(),
                });
            }
        }
        if let Some(p) = g.parent.clone() {
            if !goals.contains_key(&p) {
                return Err(SchemeError::UnknownParent { goal: id.clone(), parent: p });
            }
            goals[&p].children.push(id.clone());
        }
    }
    let roots: Vec<&String> = ids.iter().filter(|id| goals[*id].parent.is_none()).collect();
    if roots.len() != 1 {
        return Err(SchemeError::Roots(roots.len()));
    }
    let mut scheme = GoalScheme {
        name: name.unwrap_or_else(|| "scheme".into()),
        roles,
        root: roots[0].clone(),
        goals,
        version: String::new(),
    };
    let reachable: Vec<String> = scheme.preorder().iter().map(|g| g.id.clone()).collect();
    if reachable.len() != ids.len() {
        let lost = ids.into_iter().filter(|i| !reachable.contains(i)).collect();
        return Err(SchemeError::Cycle(lost));
    }
    if let Some(g) = scheme.leaves().into_iter().find(|g| g.role.is_none()) {
        return Err(SchemeError::LeafWithoutRole(g.id.clone()));
    }
    scheme.rehash();
    Ok(scheme)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalStatus {
    Waiting,
    Enabled,
    InProgress,
    Achieved,
    Failed,
}

impl fmt::Display for GoalStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GoalStatus::Waiting => "waiting",
            GoalStatus::Enabled => "enabled",
            GoalStatus::InProgress => "in_progress",
            GoalStatus::Achieved => "achieved",
            GoalStatus::Failed => "failed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatusChange {
    pub goal: String,
    pub status: GoalStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemeState {
    pub status: BTreeMap<String, GoalStatus>,
    pub commitments: BTreeMap<String, String>,
}

impl SchemeState {
    /// Fresh state with the root's first goals enabled.
    pub fn new(scheme: &GoalScheme) -> Self {
        let mut st = Self {
            status: scheme.goals.keys().map(|k| (k.clone(), GoalStatus::Waiting)).collect(),
            commitments: BTreeMap::new(),
        };
        refresh(scheme, &mut st);
        st
    }

    pub fn get(&self, id: &str) -> GoalStatus {
        self.status.get(id).copied().unwrap_or(GoalStatus::Waiting)
    }

    pub fn is_finished(&self, scheme: &GoalScheme) -> bool {
        matches!(self.get(&scheme.root), GoalStatus::Achieved | GoalStatus::Failed)
    }
}

pub fn commit(scheme: &GoalScheme, state: &mut SchemeState, role: &str, agent: &str) -> Result<(), SchemeError> {
    if !scheme.roles.iter().any(|r| r == role) {
        return Err(SchemeError::NoSuchRole(role.into()));
    }
    if let Some(a) = state.commitments.get(role) {
        return Err(SchemeError::AlreadyCommitted {
            role: role.into(),
            agent: a.clone(),
        });
    }
    state.commitments.insert(role.into(), agent.into());
    Ok(())
}

/// Leaves whose sequencing preconditions hold and that have not started.
pub fn enabled_goals(scheme: &GoalScheme, state: &SchemeState) -> Vec<String> {
    scheme
        .leaves()
        .into_iter()
        .filter(|g| state.get(&g.id) == GoalStatus::Enabled)
        .map(|g| g.id.clone())
        .collect()
}

/// Enabled leaves whose role has a committed agent, with that agent.
pub fn executable_goals(scheme: &GoalScheme, state: &SchemeState) -> Vec<(String, String)> {
    enabled_goals(scheme, state)
        .into_iter()
        .filter_map(|id| {
            let role = scheme.goals[&id].role.as_ref()?;
            Some((id, state.commitments.get(role)?.clone()))
        })
        .collect()
}

/// Re-derives enabling and composite statuses top-down.
fn refresh(scheme: &GoalScheme, state: &mut SchemeState) {
    fn visit(scheme: &GoalScheme, st: &mut SchemeState, id: &str) {
        let g = &scheme.goals[id];
        match st.get(id) {
            GoalStatus::Enabled | GoalStatus::InProgress => {}
            _ => return,
        }
        if g.is_leaf() {
            return;
        }
        let mut all_done = true;
        for (i, c) in g.children.iter().enumerate() {
            let ready = match g.composition {
                Composition::Parallel => true,
                Composition::Sequence => g.children[..i].iter().all(|s| st.get(s) == GoalStatus::Achieved),
            };
            if ready && st.get(c) == GoalStatus::Waiting {
                st.status.insert(c.clone(), GoalStatus::Enabled);
            }
            visit(scheme, st, c);
            all_done &= st.get(c) == GoalStatus::Achieved;
        }
        let started = g
            .children
            .iter()
            .any(|c| matches!(st.get(c), GoalStatus::InProgress | GoalStatus::Achieved));
        if all_done {
            st.status.insert(id.into(), GoalStatus::Achieved);
        } else if started {
            st.status.insert(id.into(), GoalStatus::InProgress);
        }
    }
    if state.get(&scheme.root) == GoalStatus::Waiting {
        state.status.insert(scheme.root.clone(), GoalStatus::Enabled);
    }
    visit(scheme, state, &scheme.root.clone());
}

fn diff(scheme: &GoalScheme, before: &SchemeState, after: &SchemeState) -> Vec<StatusChange> {
    // leaves before their parents so closure reads bottom-up in a trace
    let mut order: Vec<&Goal> = scheme.preorder();
    order.reverse();
    let mut out: Vec<StatusChange> = Vec::new();
    for g in scheme.preorder() {
        let (a, b) = (before.get(&g.id), after.get(&g.id));
        if a != b && !matches!(b, GoalStatus::Achieved | GoalStatus::Failed) {
            out.push(StatusChange {
                goal: g.id.clone(),
                status: b,
            });
        }
    }
    for g in order {
        let (a, b) = (before.get(&g.id), after.get(&g.id));
        if a != b && matches!(b, GoalStatus::Achieved | GoalStatus::Failed) {
            out.push(StatusChange {
                goal: g.id.clone(),
                status: b,
            });
        }
    }
    // achieved/failed changes go first so an enabled sibling never precedes
    // the achievement that enabled it
    out.sort_by_key(|c| !matches!(c.status, GoalStatus::Achieved | GoalStatus::Failed));
    out
}

/// Moves a leaf along enabled -> in_progress -> achieved | failed and
/// returns every resulting status change, in causal order.
pub fn mark(
    scheme: &GoalScheme,
    state: &mut SchemeState,
    goal: &str,
    to: GoalStatus,
) -> Result<Vec<StatusChange>, SchemeError> {
    let g = scheme.goals.get(goal).ok_or_else(|| SchemeError::UnknownGoal(goal.into()))?;
    if !g.is_leaf() {
        return Err(SchemeError::Composite(goal.into()));
    }
    let from = state.get(goal);
    let legal = matches!(
        (from, to),
        (GoalStatus::Enabled, GoalStatus::InProgress)
            | (GoalStatus::Enabled, GoalStatus::Failed)
            | (GoalStatus::InProgress, GoalStatus::Achieved)
            | (GoalStatus::InProgress, GoalStatus::Failed)
    );
    if !legal {
        return Err(SchemeError::IllegalTransition {
            goal: goal.into(),
            from,
            to,
        });
    }
    let before = state.clone();
    state.status.insert(goal.into(), to);
    if to == GoalStatus::Failed {
        for a in scheme.ancestors(goal) {
            state.status.insert(a.into(), GoalStatus::Failed);
        }
    } else {
        refresh(scheme, state);
    }
    Ok(diff(scheme, &before, state))
}

/// Resets `goal` and every later sibling (with their subtrees) to waiting,
/// reactivates the ancestors, and re-derives enabling. Used for revision
/// loops after a goal failed.
pub fn reopen(scheme: &GoalScheme, state: &mut SchemeState, goal: &str) -> Result<Vec<StatusChange>, SchemeError> {
    let g = scheme.goals.get(goal).ok_or_else(|| SchemeError::UnknownGoal(goal.into()))?;
    let before = state.clone();
    let mut reset: Vec<String> = vec![goal.into()];
    if let Some(p) = &g.parent {
        let sibs = &scheme.goals[p].children;
        let at = sibs.iter().position(|s| s == goal).unwrap();
        reset = sibs[at..].to_vec();
    }
    let mut stack = reset;
    while let Some(id) = stack.pop() {
        state.status.insert(id.clone(), GoalStatus::Waiting);
        stack.extend(scheme.goals[&id].children.iter().cloned());
    }
    for a in scheme.ancestors(goal) {
        state.status.insert(a.into(), GoalStatus::InProgress);
    }
    if g.parent.is_none() {
        state.status.insert(goal.into(), GoalStatus::Waiting);
    }
    refresh(scheme, state);
    Ok(diff(scheme, &before, state))
}
