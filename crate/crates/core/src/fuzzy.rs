//! Mamdani stabiliser: triangular memberships, min/max inference, centroid
//! defuzzification and incremental (valve-delta) output.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Number of evenly spaced quadrature nodes over the output universe.
pub const GRID_POINTS: usize = 1024;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RulebaseError {
    #[error("rulebase document: {0}")]
    Parse(String),
    #[error("variable {var}: set {label} must satisfy a <= b <= c with a < c")]
    BadTriangle { var: String, label: String },
    #[error("variable {var}: universe must be an increasing finite interval")]
    BadUniverse { var: String },
    #[error("variable {var}: partition leaves {x} uncovered")]
    Uncovered { var: String, x: f64 },
    #[error("rule references unknown label {label} of {var}")]
    UnknownLabel { var: String, label: String },
    #[error("rule table shape does not match its row and column labels")]
    Shape,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Triangle {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Triangle {
    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }

    pub fn degree(&self, x: f64) -> f64 {
        if x < self.a || x > self.c {
            0.0
        } else if x == self.b {
            1.0
        } else if x < self.b {
            (x - self.a) / (self.b - self.a)
        } else {
            (self.c - x) / (self.c - self.b)
        }
    }
}

/// A linguistic variable: universe plus labelled triangles.
#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub sets: Vec<(String, Triangle)>,
}

impl Variable {
    fn label(&self, l: &str) -> Option<usize> {
        self.sets.iter().position(|(n, _)| n == l)
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    fn validate(&self) -> Result<(), RulebaseError> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(RulebaseError::BadUniverse { var: self.name.clone() });
        }
        let mut crit = vec![self.lo, self.hi];
        for (label, t) in &self.sets {
            let ok = [t.a, t.b, t.c].iter().all(|v| v.is_finite()) && t.a <= t.b && t.b <= t.c && t.a < t.c;
            if !ok {
                return Err(RulebaseError::BadTriangle {
                    var: self.name.clone(),
                    label: label.clone(),
                });
            }
            crit.extend([t.a, t.b, t.c]);
        }
        crit.retain(|x| (self.lo..=self.hi).contains(x));
        crit.sort_by(f64::total_cmp);
        crit.dedup();
        // positivity can only change at a critical point, so checking those
        // and the midpoints between them covers the whole universe
        let mut probes = crit.clone();
        probes.extend(crit.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        for x in probes {
            if self.sets.iter().all(|(_, t)| t.degree(x) <= 0.0) {
                return Err(RulebaseError::Uncovered {
                    var: self.name.clone(),
                    x,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rule {
    pub e: usize,
    pub de: usize,
    pub du: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleBase {
    pub e: Variable,
    pub de: Variable,
    pub du: Variable,
    pub rules: Vec<Rule>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VarDoc {
    universe: [f64; 2],
    sets: BTreeMap<String, [f64; 3]>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RulesDoc {
    rows: Vec<String>,
    columns: Vec<String>,
    table: Vec<Vec<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RulebaseDoc {
    e: VarDoc,
    de: VarDoc,
    du: VarDoc,
    rules: RulesDoc,
}

fn variable(name: &str, d: VarDoc) -> Variable {
    let mut sets: Vec<(String, Triangle)> = d
        .sets
        .into_iter()
        .map(|(l, [a, b, c])| (l, Triangle::new(a, b, c)))
        .collect();
    sets.sort_by(|x, y| x.1.b.total_cmp(&y.1.b));
    Variable {
        name: name.into(),
        lo: d.universe[0],
        hi: d.universe[1],
        sets,
    }
}

impl RuleBase {
    /// Loads a TOML rulebase: `[e]`, `[de]`, `[du]` each with a `universe` and
    /// `sets` of triangles, and a `[rules]` table of du labels indexed by
    /// e label (rows) and de label (columns).
    pub fn from_toml(src: &str) -> Result<Self, RulebaseError> {
        let doc: RulebaseDoc = toml::from_str(src).map_err(|e| RulebaseError::Parse(e.to_string()))?;
        let e = variable("e", doc.e);
        let de = variable("de", doc.de);
        let du = variable("du", doc.du);
        let r = doc.rules;
        if r.table.len() != r.rows.len() || r.table.iter().any(|row| row.len() != r.columns.len()) {
            return Err(RulebaseError::Shape);
        }
        let find = |v: &Variable, l: &str| {
            v.label(l).ok_or_else(|| RulebaseError::UnknownLabel {
                var: v.name.clone(),
                label: l.into(),
            })
        };
        let mut rules = Vec::new();
        for (row, el) in r.table.iter().zip(&r.rows) {
            for (cell, dl) in row.iter().zip(&r.columns) {
                rules.push(Rule {
                    e: find(&e, el)?,
                    de: find(&de, dl)?,
                    du: find(&du, cell)?,
                });
            }
        }
        let rb = RuleBase { e, de, du, rules };
        rb.validate()?;
        Ok(rb)
    }

    pub fn validate(&self) -> Result<(), RulebaseError> {
        self.e.validate()?;
        self.de.validate()?;
        self.du.validate()?;
        for r in &self.rules {
            for (v, i) in [(&self.e, r.e), (&self.de, r.de), (&self.du, r.du)] {
                if i >= v.sets.len() {
                    return Err(RulebaseError::UnknownLabel {
                        var: v.name.clone(),
                        label: format!("#{i}"),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Degree of `x` in `mf`, with `x` clamped to `[lo, hi]` first.
pub fn fuzzify(x: f64, mf: &Triangle, lo: f64, hi: f64) -> f64 {
    mf.degree(x.clamp(lo, hi))
}

/// Union of clipped output triangles over the output universe.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedSet {
    pub lo: f64,
    pub hi: f64,
    /// (clip level, triangle); levels in (0, 1].
    pub clipped: Vec<(f64, Triangle)>,
}

impl AggregatedSet {
    pub fn empty(lo: f64, hi: f64) -> Self {
        Self {
            lo,
            hi,
            clipped: vec![],
        }
    }

    pub fn degree(&self, x: f64) -> f64 {
        self.clipped
            .iter()
            .map(|(h, t)| t.degree(x).min(*h))
            .fold(0.0, f64::max)
    }

    /// Every abscissa where the envelope may change slope.
    fn breakpoints(&self) -> Vec<f64> {
        // each clipped set is made of these lines: y = m x + q
        let mut lines: Vec<(f64, f64)> = vec![(0.0, 0.0)];
        let mut out = Vec::new();
        for (h, t) in &self.clipped {
            out.extend([t.a, t.b, t.c]);
            lines.push((0.0, *h));
            if t.b > t.a {
                let m = 1.0 / (t.b - t.a);
                lines.push((m, -t.a * m));
                out.push(t.a + h * (t.b - t.a));
            }
            if t.c > t.b {
                let m = -1.0 / (t.c - t.b);
                lines.push((m, -t.c * m));
                out.push(t.c - h * (t.c - t.b));
            }
        }
        for i in 0..lines.len() {
            for j in i + 1..lines.len() {
                let (m1, q1) = lines[i];
                let (m2, q2) = lines[j];
                if m1 != m2 {
                    out.push((q2 - q1) / (m1 - m2));
                }
            }
        }
        out
    }

    /// Quadrature nodes: the fixed grid plus every interior breakpoint.
    pub fn nodes(&self) -> Vec<f64> {
        let n = GRID_POINTS;
        let span = self.hi - self.lo;
        let mut xs: Vec<f64> = (0..n).map(|i| self.lo + span * i as f64 / (n - 1) as f64).collect();
        xs.extend(self.breakpoints().into_iter().filter(|x| x.is_finite() && *x > self.lo && *x < self.hi));
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        xs
    }
}

/// Mamdani min/max inference. Rules sharing a consequent merge into one clip
/// at the strongest activation.
pub fn infer(rb: &RuleBase, e: f64, de: f64) -> AggregatedSet {
    let mut levels = vec![0.0f64; rb.du.sets.len()];
    for r in &rb.rules {
        let w = fuzzify(e, &rb.e.sets[r.e].1, rb.e.lo, rb.e.hi).min(fuzzify(de, &rb.de.sets[r.de].1, rb.de.lo, rb.de.hi));
        levels[r.du] = levels[r.du].max(w);
    }
    AggregatedSet {
        lo: rb.du.lo,
        hi: rb.du.hi,
        clipped: levels
            .into_iter()
            .zip(&rb.du.sets)
            .filter(|(h, _)| *h > 0.0)
            .map(|(h, (_, t))| (h, *t))
            .collect(),
    }
}

/// Centroid of the aggregated set, or 0 when its area is 0.
///
/// The set is piecewise linear and linear between consecutive nodes, so the
/// trapezoid rule is exact for the area and the per-panel rule for a product
/// of two linear functions is exact for the moment.
pub fn defuzzify_centroid(set: &AggregatedSet) -> f64 {
    if set.clipped.is_empty() {
        return 0.0;
    }
    let xs = set.nodes();
    let mus: Vec<f64> = xs.iter().map(|x| set.degree(*x)).collect();
    let (mut area, mut moment) = (0.0, 0.0);
    for i in 1..xs.len() {
        let (x0, x1, m0, m1) = (xs[i - 1], xs[i], mus[i - 1], mus[i]);
        let h = x1 - x0;
        area += 0.5 * h * (m0 + m1);
        moment += h / 6.0 * (2.0 * x0 * m0 + x0 * m1 + x1 * m0 + 2.0 * x1 * m1);
    }
    if area <= 0.0 {
        0.0
    } else {
        moment / area
    }
}

/// One controller evaluation; returns the valve delta for this period.
pub fn control_step(temp: f64, temp_prev: f64, setpoint: f64, rb: &RuleBase, dt: f64) -> f64 {
    if ![temp, temp_prev, setpoint, dt].iter().all(|v| v.is_finite()) || dt <= 0.0 {
        log::warn!("stabiliser: non-finite input (T={temp}, T_prev={temp_prev}, sp={setpoint}, dt={dt}); holding valve");
        return 0.0;
    }
    let e = temp - setpoint;
    let de = (temp - temp_prev) / dt;
    rb.du.clamp(defuzzify_centroid(&infer(rb, e, de)))
}

/// Incremental controller state: remembers the previous temperature.
#[derive(Debug, Clone)]
pub struct Stabiliser {
    pub setpoint: f64,
    pub period: f64,
    prev: Option<f64>,
}

impl Stabiliser {
    pub fn new(setpoint: f64, period: f64) -> Self {
        Self {
            setpoint,
            period,
            prev: None,
        }
    }

    /// New valve opening from the current one.
    pub fn update(&mut self, rb: &RuleBase, temp: f64, valve: f64) -> f64 {
        let prev = self.prev.replace(temp).unwrap_or(temp);
        (valve + control_step(temp, prev, self.setpoint, rb, self.period)).clamp(0.0, 1.0)
    }

    pub fn reset(&mut self) {
        self.prev = None;
    }
}
