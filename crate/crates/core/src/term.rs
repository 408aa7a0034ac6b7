//! Logic terms shared by beliefs, plan patterns and action literals.

use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Serialize, Serializer};

use crate::syntax::{Cursor, SyntaxError, Tok};

#[derive(Debug, Clone)]
pub enum Term {
    Atom(String),
    Num(f64),
    Str(String),
    Var(String),
    Struct(Literal),
}

impl PartialEq for Term {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Term::Atom(a), Term::Atom(b)) => a == b,
            (Term::Num(a), Term::Num(b)) => num_key(*a) == num_key(*b),
            (Term::Str(a), Term::Str(b)) => a == b,
            (Term::Var(a), Term::Var(b)) => a == b,
            (Term::Struct(a), Term::Struct(b)) => a == b,
            _ => false,
        }
    }
}

impl Eq for Term {}

impl Hash for Term {
    fn hash<H: Hasher>(&self, state: &mut H) {
        std::mem::discriminant(self).hash(state);
        match self {
            Term::Atom(s) | Term::Str(s) | Term::Var(s) => s.hash(state),
            Term::Num(n) => num_key(*n).hash(state),
            Term::Struct(l) => l.hash(state),
        }
    }
}

// -0.0 and 0.0 are the same belief argument.
fn num_key(n: f64) -> u64 {
    if n == 0.0 {
        0
    } else {
        n.to_bits()
    }
}

impl Term {
    pub fn atom(s: impl Into<String>) -> Self {
        Term::Atom(s.into())
    }

    pub fn is_ground(&self) -> bool {
        match self {
            Term::Var(_) => false,
            Term::Struct(l) => l.is_ground(),
            _ => true,
        }
    }

    pub fn as_atom(&self) -> Option<&str> {
        match self {
            Term::Atom(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_num(&self) -> Option<f64> {
        match self {
            Term::Num(n) => Some(*n),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Term::Atom(s) | Term::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn substitute(&self, b: &Bindings) -> Term {
        match self {
            Term::Var(v) => match b.get(v) {
                Some(t) => t.substitute(b),
                None => self.clone(),
            },
            Term::Struct(l) => Term::Struct(l.substitute(b)),
            other => other.clone(),
        }
    }

    fn collect_vars(&self, out: &mut Vec<String>) {
        match self {
            Term::Var(v) if v != "_" => {
                if !out.contains(v) {
                    out.push(v.clone());
                }
            }
            Term::Struct(l) => l.collect_vars(out),
            _ => {}
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Atom(s) | Term::Var(s) => f.write_str(s),
            Term::Num(n) => write!(f, "{n}"),
            Term::Str(s) => write!(f, "{s:?}"),
            Term::Struct(l) => write!(f, "{l}"),
        }
    }
}

/// `functor(arg, ...)`. A zero-arity literal prints without parentheses.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Literal {
    pub functor: String,
    pub args: Vec<Term>,
}

impl Literal {
    pub fn new(functor: impl Into<String>, args: Vec<Term>) -> Self {
        Self {
            functor: functor.into(),
            args,
        }
    }

    pub fn atom(functor: impl Into<String>) -> Self {
        Self::new(functor, Vec::new())
    }

    pub fn arity(&self) -> usize {
        self.args.len()
    }

    pub fn is_ground(&self) -> bool {
        self.args.iter().all(Term::is_ground)
    }

    pub fn substitute(&self, b: &Bindings) -> Literal {
        Literal {
            functor: self.functor.clone(),
            args: self.args.iter().map(|t| t.substitute(b)).collect(),
        }
    }

    pub fn vars(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut Vec<String>) {
        for a in &self.args {
            a.collect_vars(out);
        }
    }

    /// Parses a single literal such as `valve(0.5)`.
    pub fn parse(src: &str) -> Result<Literal, SyntaxError> {
        let mut cur = Cursor::new(crate::syntax::tokenize(src)?);
        let lit = parse_literal(&mut cur)?;
        if !cur.is_done() {
            return Err(cur.unexpected("end of literal"));
        }
        Ok(lit)
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.functor)?;
        if !self.args.is_empty() {
            f.write_str("(")?;
            for (i, a) in self.args.iter().enumerate() {
                if i > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{a}")?;
            }
            f.write_str(")")?;
        }
        Ok(())
    }
}

impl Serialize for Literal {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Variable bindings in first-bound order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Bindings(Vec<(String, Term)>);

impl Bindings {
    pub fn get(&self, var: &str) -> Option<&Term> {
        self.0.iter().find(|(v, _)| v == var).map(|(_, t)| t)
    }

    pub fn bind(&mut self, var: &str, t: Term) {
        self.0.push((var.to_string(), t));
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn truncate(&mut self, n: usize) {
        self.0.truncate(n);
    }
}

/// Unifies `pattern` (may hold variables) with `other`, extending `b`.
/// On failure the bindings are restored.
pub fn unify_terms(pattern: &Term, other: &Term, b: &mut Bindings) -> bool {
    let mark = b.len();
    let ok = unify_inner(pattern, other, b);
    if !ok {
        b.truncate(mark);
    }
    ok
}

fn unify_inner(p: &Term, o: &Term, b: &mut Bindings) -> bool {
    let p = resolve(p, b);
    let o = resolve(o, b);
    match (&p, &o) {
        (Term::Var(v), _) if v == "_" => true,
        (_, Term::Var(v)) if v == "_" => true,
        (Term::Var(v), t) | (t, Term::Var(v)) => {
            if let Term::Var(w) = t {
                if w == v {
                    return true;
                }
            }
            b.bind(v, t.clone());
            true
        }
        (Term::Struct(a), Term::Struct(c)) => unify_lits_inner(a, c, b),
        (a, c) => a == c,
    }
}

fn resolve(t: &Term, b: &Bindings) -> Term {
    let mut cur = t.clone();
    while let Term::Var(v) = &cur {
        match b.get(v) {
            Some(next) => cur = next.clone(),
            None => break,
        }
    }
    cur
}

pub fn unify_literals(pattern: &Literal, other: &Literal, b: &mut Bindings) -> bool {
    let mark = b.len();
    let ok = unify_lits_inner(pattern, other, b);
    if !ok {
        b.truncate(mark);
    }
    ok
}

fn unify_lits_inner(a: &Literal, c: &Literal, b: &mut Bindings) -> bool {
    a.functor == c.functor
        && a.args.len() == c.args.len()
        && a.args.iter().zip(&c.args).all(|(x, y)| unify_inner(x, y, b))
}

pub(crate) fn parse_literal(cur: &mut Cursor) -> Result<Literal, SyntaxError> {
    let functor = cur.ident()?;
    let mut args = Vec::new();
    if cur.eat(&Tok::LParen) && !cur.eat(&Tok::RParen) {
        loop {
            args.push(parse_term(cur)?);
            if cur.eat(&Tok::RParen) {
                break;
            }
            cur.expect(&Tok::Comma)?;
        }
    }
    Ok(Literal { functor, args })
}

pub(crate) fn parse_term(cur: &mut Cursor) -> Result<Term, SyntaxError> {
    match cur.peek().cloned() {
        Some(Tok::Var(v)) => {
            cur.bump();
            Ok(Term::Var(v))
        }
        Some(Tok::Num(n)) => {
            cur.bump();
            Ok(Term::Num(n))
        }
        Some(Tok::Minus) => {
            cur.bump();
            match cur.bump() {
                Some(Tok::Num(n)) => Ok(Term::Num(-n)),
                _ => Err(cur.unexpected("number after `-`")),
            }
        }
        Some(Tok::Str(s)) => {
            cur.bump();
            Ok(Term::Str(s))
        }
        Some(Tok::Ident(_)) => {
            let lit = parse_literal(cur)?;
            if lit.args.is_empty() {
                Ok(Term::Atom(lit.functor))
            } else {
                Ok(Term::Struct(lit))
            }
        }
        _ => Err(cur.unexpected("term")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_roundtrips_through_parse() {
        for src in ["switch(open)", "compressor_stopped", "valve(0.5)", "goal(g1,review(engineer))", "note(\"hi\",-2)"] {
            let lit = Literal::parse(src).unwrap();
            assert_eq!(lit.to_string(), src);
        }
    }

    #[test]
    fn unify_binds_and_restores() {
        let pat = Literal::parse("cond_op(X)").unwrap();
        let fact = Literal::parse("cond_op(normal)").unwrap();
        let mut b = Bindings::default();
        assert!(unify_literals(&pat, &fact, &mut b));
        assert_eq!(b.get("X"), Some(&Term::atom("normal")));

        let pat2 = Literal::parse("pair(X,X)").unwrap();
        let fact2 = Literal::parse("pair(a,b)").unwrap();
        let mut b2 = Bindings::default();
        assert!(!unify_literals(&pat2, &fact2, &mut b2));
        assert!(b2.is_empty());
    }

    #[test]
    fn nested_structures_unify() {
        let pat = Literal::parse("goal(G,review(Actor))").unwrap();
        let fact = Literal::parse("goal(g4,review(operator))").unwrap();
        let mut b = Bindings::default();
        assert!(unify_literals(&pat, &fact, &mut b));
        assert_eq!(pat.substitute(&b), fact);
    }

    #[test]
    fn signed_zero_is_one_value() {
        assert_eq!(Term::Num(0.0), Term::Num(-0.0));
    }
}
