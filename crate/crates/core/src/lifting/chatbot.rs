use std::collections::BTreeMap;

use serde::Serialize;

use super::approval::{Actor, ApprovalDecision, Verdict};

pub const HELP: &str = "commands:\n  accept <proposal-id>\n  contest <proposal-id> [param=value ...] [note]\n  status\n  help";

/// One line typed to the chatbot.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum ChatCommand {
    Accept {
        proposal_id: String,
    },
    Contest {
        proposal_id: String,
        adjustments: BTreeMap<String, f64>,
        note: String,
    },
    Status,
    /// Unrecognised or malformed input; `reason` says what was wrong.
    Help {
        reason: Option<String>,
    },
}

impl ChatCommand {
    /// The decision this command stands for, if it is one.
    pub fn decision(&self, actor: Actor) -> Option<ApprovalDecision> {
        match self {
            ChatCommand::Accept { proposal_id } => Some(ApprovalDecision::accept(proposal_id, actor)),
            ChatCommand::Contest {
                proposal_id,
                adjustments,
                note,
            } => Some(ApprovalDecision {
                proposal_id: proposal_id.clone(),
                actor,
                verdict: Verdict::Contest,
                adjustments: adjustments.clone(),
                note: note.clone(),
            }),
            _ => None,
        }
    }
}

fn help(reason: impl Into<String>) -> ChatCommand {
    ChatCommand::Help {
        reason: Some(reason.into()),
    }
}

/// Parses `accept P-7`, `contest P-7 injection_rate=80 too high`, `status`
/// or `help`. Anything else yields help. Verbs are case-insensitive; the
/// note is everything after the last leading `name=value` pair.
pub fn chatbot_parse(text: &str) -> ChatCommand {
    let mut words = text.split_whitespace();
    let Some(verb) = words.next() else {
        return ChatCommand::Help { reason: None };
    };
    let verb = verb.to_ascii_lowercase();
    match verb.as_str() {
        "status" | "help" if words.next().is_some() => help(format!("`{verb}` takes no arguments")),
        "status" => ChatCommand::Status,
        "help" => ChatCommand::Help { reason: None },
        "accept" | "contest" => {
            let Some(id) = words.next() else {
                return help(format!("`{verb}` needs a proposal id"));
            };
            let rest: Vec<&str> = words.collect();
            if verb == "accept" {
                return match rest.is_empty() {
                    true => ChatCommand::Accept { proposal_id: id.into() },
                    false => help("`accept` takes only a proposal id"),
                };
            }
            let mut adjustments = BTreeMap::new();
            let mut i = 0;
            while let Some((k, v)) = rest.get(i).and_then(|w| w.split_once('=')) {
                match v.parse::<f64>() {
                    Ok(x) if x.is_finite() && !k.is_empty() => {
                        adjustments.insert(k.to_string(), x);
                    }
                    _ => return help(format!("`{}` is not name=number", rest[i])),
                }
                i += 1;
            }
            ChatCommand::Contest {
                proposal_id: id.into(),
                adjustments,
                note: rest[i..].join(" "),
            }
        }
        _ => help(format!("unknown command `{verb}`")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(chatbot_parse("accept P-7"), ChatCommand::Accept { proposal_id: "P-7".into() });
        assert_eq!(chatbot_parse("  ACCEPT   P-7 "), ChatCommand::Accept { proposal_id: "P-7".into() });
        assert_eq!(
            chatbot_parse("contest P-7 injection_rate=80 pump_frequency=55.5 keep it gentle"),
            ChatCommand::Contest {
                proposal_id: "P-7".into(),
                adjustments: BTreeMap::from([("injection_rate".into(), 80.0), ("pump_frequency".into(), 55.5)]),
                note: "keep it gentle".into(),
            }
        );
        assert_eq!(
            chatbot_parse("contest P-2 not now"),
            ChatCommand::Contest {
                proposal_id: "P-2".into(),
                adjustments: BTreeMap::new(),
                note: "not now".into(),
            }
        );
        assert_eq!(chatbot_parse("status"), ChatCommand::Status);
        assert_eq!(chatbot_parse("help"), ChatCommand::Help { reason: None });
        assert_eq!(chatbot_parse(""), ChatCommand::Help { reason: None });
    }

    #[test]
    fn malformed_input_gives_help() {
        for s in ["approve P-1", "accept", "accept P-1 now", "contest P-1 rate=fast", "status now", "contest"] {
            assert!(matches!(chatbot_parse(s), ChatCommand::Help { reason: Some(_) }), "{s}");
        }
    }

    #[test]
    fn commands_become_decisions() {
        let d = chatbot_parse("contest P-3 injection_rate=90").decision(Actor::Engineer).unwrap();
        assert_eq!(d.verdict, Verdict::Contest);
        assert_eq!(d.proposal_id, "P-3");
        assert!(d.validate().is_ok());
        // an empty contest parses but does not validate
        let d = chatbot_parse("contest P-3").decision(Actor::Operator).unwrap();
        assert!(d.validate().is_err());
        assert_eq!(chatbot_parse("status").decision(Actor::Engineer), None);
    }
}
