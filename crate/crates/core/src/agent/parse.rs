//! Plan-library documents.
//!
//! ```text
//! override abnormal_temperature.            // events that preempt everything else
//! switch(open).                             // initial belief
//! !start.                                   // initial goal
//! @controlRule1                             // optional label
//! +compressor_stopped : switch(open) & cond_op(normal) <-
//!     take_valve;                           // action
//!     +in_control;                          // belief addition (`-b` removes)
//!     !stabilise;                           // subgoal
//!     .at(20, +!recover);                   // timer, delay in ticks
//!     .send(chatbot, tell, ready);          // message
//!     .drop_all_intentions.
//! ```

use crate::syntax::{tokenize, Cursor, Pos, SyntaxError, Tok};
use crate::term::{parse_literal, parse_term, Literal, Term};

use super::event::{EventKind, Polarity};
use super::plan::{Condition, Performative, Plan, PlanLibrary, Step, Trigger};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LibraryError {
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error("{pos}: plan {plan}: variable {var} is used in the body but bound by neither trigger nor context")]
    UnboundVariable { pos: Pos, plan: String, var: String },
    #[error("{pos}: initial belief {belief} is not ground")]
    NonGroundBelief { pos: Pos, belief: String },
}

pub fn parse_library(src: &str) -> Result<PlanLibrary, LibraryError> {
    let mut cur = Cursor::new(tokenize(src)?);
    let mut lib = PlanLibrary::default();
    while !cur.is_done() {
        let pos = cur.pos();
        match cur.peek() {
            Some(Tok::Ident(w)) if w == "override" && matches!(cur.peek_at(1), Some(Tok::Ident(_))) => {
                cur.bump();
                loop {
                    lib.overrides.insert(cur.ident()?);
                    if !cur.eat(&Tok::Comma) {
                        break;
                    }
                }
                cur.expect(&Tok::Dot)?;
            }
            Some(Tok::At) => {
                cur.bump();
                let label = cur.ident()?;
                let plan = parse_plan(&mut cur, Some(label), pos)?;
                lib.push(plan);
            }
            Some(Tok::Plus) | Some(Tok::Minus) => {
                let plan = parse_plan(&mut cur, None, pos)?;
                lib.push(plan);
            }
            Some(Tok::Bang) => {
                cur.bump();
                lib.initial_goals.push(parse_literal(&mut cur)?);
                cur.expect(&Tok::Dot)?;
            }
            Some(Tok::Ident(_)) => {
                let lit = parse_literal(&mut cur)?;
                if !lit.is_ground() {
                    return Err(LibraryError::NonGroundBelief {
                        pos,
                        belief: lit.to_string(),
                    });
                }
                cur.expect(&Tok::Dot)?;
                lib.initial_beliefs.push(lit);
            }
            _ => return Err(cur.unexpected("belief, goal, plan or override declaration").into()),
        }
    }
    Ok(lib)
}

fn parse_trigger(cur: &mut Cursor) -> Result<Trigger, SyntaxError> {
    let polarity = if cur.eat(&Tok::Plus) {
        Polarity::Added
    } else if cur.eat(&Tok::Minus) {
        Polarity::Removed
    } else {
        return Err(cur.unexpected("`+` or `-`"));
    };
    let kind = if cur.eat(&Tok::Bang) {
        EventKind::Achieve
    } else {
        EventKind::Belief
    };
    let literal = parse_literal(cur)?;
    Ok(Trigger {
        polarity,
        kind,
        literal,
    })
}

fn parse_plan(cur: &mut Cursor, label: Option<String>, pos: Pos) -> Result<Plan, LibraryError> {
    let trigger = parse_trigger(cur)?;
    let mut context = Vec::new();
    if cur.eat(&Tok::Colon) {
        if matches!(cur.peek(), Some(Tok::Ident(w)) if w == "true") && !matches!(cur.peek_at(1), Some(Tok::LParen)) {
            cur.bump();
        } else {
            loop {
                let negated = matches!(cur.peek(), Some(Tok::Ident(w)) if w == "not")
                    && matches!(cur.peek_at(1), Some(Tok::Ident(_)));
                if negated {
                    cur.bump();
                }
                context.push(Condition {
                    negated,
                    literal: parse_literal(cur)?,
                });
                if !cur.eat(&Tok::Amp) {
                    break;
                }
            }
        }
    }
    let mut body = Vec::new();
    if cur.eat(&Tok::LArrow) {
        loop {
            body.push(parse_step(cur)?);
            if !cur.eat(&Tok::Semi) {
                break;
            }
        }
    }
    cur.expect(&Tok::Dot)?;

    let plan = Plan {
        label,
        trigger,
        context,
        body,
        index: 0,
    };
    check_bound(&plan, pos)?;
    Ok(plan)
}

fn parse_step(cur: &mut Cursor) -> Result<Step, SyntaxError> {
    match cur.peek().cloned() {
        Some(Tok::Bang) => {
            cur.bump();
            Ok(Step::Achieve(parse_literal(cur)?))
        }
        Some(Tok::Plus) => {
            cur.bump();
            Ok(Step::AddBelief(parse_literal(cur)?))
        }
        Some(Tok::Minus) => {
            cur.bump();
            Ok(Step::RemoveBelief(parse_literal(cur)?))
        }
        Some(Tok::Internal(name)) => {
            let pos = cur.pos();
            cur.bump();
            match name.as_str() {
                "drop_all_intentions" => Ok(Step::DropAllIntentions),
                "at" => {
                    cur.expect(&Tok::LParen)?;
                    let delay = match cur.bump() {
                        Some(Tok::Num(n)) if n >= 0.0 && n.fract() == 0.0 => n as u64,
                        _ => return Err(SyntaxError::new(pos, ".at delay must be a non-negative whole number of ticks")),
                    };
                    cur.expect(&Tok::Comma)?;
                    let event = parse_trigger(cur)?;
                    cur.expect(&Tok::RParen)?;
                    Ok(Step::Schedule { delay, event })
                }
                "send" => {
                    cur.expect(&Tok::LParen)?;
                    let to = parse_term(cur)?;
                    cur.expect(&Tok::Comma)?;
                    let perf_pos = cur.pos();
                    let perf = cur.ident()?;
                    let performative = Performative::parse(&perf)
                        .ok_or_else(|| SyntaxError::new(perf_pos, format!("unknown performative `{perf}`")))?;
                    cur.expect(&Tok::Comma)?;
                    let content = parse_literal(cur)?;
                    cur.expect(&Tok::RParen)?;
                    Ok(Step::Send {
                        to,
                        performative,
                        content,
                    })
                }
                other => Err(SyntaxError::new(pos, format!("unknown internal action `.{other}`"))),
            }
        }
        Some(Tok::Ident(_)) => Ok(Step::Action(parse_literal(cur)?)),
        _ => Err(cur.unexpected("plan body step")),
    }
}

fn check_bound(plan: &Plan, pos: Pos) -> Result<(), LibraryError> {
    let mut bound = plan.trigger.literal.vars();
    for c in plan.context.iter().filter(|c| !c.negated) {
        bound.extend(c.literal.vars());
    }
    let mut used: Vec<String> = Vec::new();
    for s in &plan.body {
        match s {
            Step::Action(l) | Step::Achieve(l) | Step::AddBelief(l) => used.extend(l.vars()),
            Step::Schedule { event, .. } => used.extend(event.literal.vars()),
            Step::Send { to, content, .. } => {
                if let Term::Var(v) = to {
                    used.push(v.clone());
                }
                used.extend(content.vars());
            }
            // `-b(_)`-style removal patterns may leave variables free.
            Step::RemoveBelief(_) | Step::DropAllIntentions => {}
        }
    }
    match used.into_iter().find(|v| v != "_" && !bound.contains(v)) {
        Some(var) => Err(LibraryError::UnboundVariable {
            pos,
            plan: plan.label.clone().unwrap_or_else(|| plan.trigger.to_string()),
            var,
        }),
        None => Ok(()),
    }
}

/// Parses a ground belief literal like `switch(open)`.
pub fn parse_belief(src: &str) -> Result<Literal, LibraryError> {
    let lit = Literal::parse(src)?;
    if !lit.is_ground() {
        return Err(LibraryError::NonGroundBelief {
            pos: Pos { line: 1, col: 1 },
            belief: src.to_string(),
        });
    }
    Ok(lit)
}
