use std::collections::VecDeque;
use std::fmt;

use serde::{Serialize, Serializer};

use crate::term::Literal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Added,
    Removed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Belief,
    Achieve,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Priority {
    Normal,
    Override,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub polarity: Polarity,
    pub kind: EventKind,
    pub content: Literal,
    /// Logical tick at which the event was generated.
    pub timestamp: u64,
    pub priority: Priority,
}

impl Event {
    pub fn belief(polarity: Polarity, content: Literal, timestamp: u64) -> Self {
        Self {
            polarity,
            kind: EventKind::Belief,
            content,
            timestamp,
            priority: Priority::Normal,
        }
    }

    pub fn achieve(content: Literal, timestamp: u64) -> Self {
        Self {
            polarity: Polarity::Added,
            kind: EventKind::Achieve,
            content,
            timestamp,
            priority: Priority::Normal,
        }
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = match self.polarity {
            Polarity::Added => "+",
            Polarity::Removed => "-",
        };
        let bang = if self.kind == EventKind::Achieve { "!" } else { "" };
        write!(f, "{sign}{bang}{}", self.content)
    }
}

impl Serialize for Event {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Two FIFO lanes; override events always leave first.
#[derive(Debug, Clone, Default)]
pub struct EventQueue {
    urgent: VecDeque<Event>,
    normal: VecDeque<Event>,
}

impl EventQueue {
    pub fn push(&mut self, e: Event) {
        match e.priority {
            Priority::Override => self.urgent.push_back(e),
            Priority::Normal => self.normal.push_back(e),
        }
    }

    pub fn pop(&mut self) -> Option<Event> {
        self.urgent.pop_front().or_else(|| self.normal.pop_front())
    }

    pub fn len(&self) -> usize {
        self.urgent.len() + self.normal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(name: &str, pri: Priority) -> Event {
        Event {
            priority: pri,
            ..Event::belief(Polarity::Added, Literal::atom(name), 0)
        }
    }

    proptest! {
        #[test]
        fn override_first_then_fifo(flags in proptest::collection::vec(any::<bool>(), 0..40)) {
            let mut q = EventQueue::default();
            for (i, urgent) in flags.iter().enumerate() {
                let pri = if *urgent { Priority::Override } else { Priority::Normal };
                q.push(ev(&format!("e{i}"), pri));
            }
            let mut expected: Vec<String> = flags.iter().enumerate().filter(|(_, u)| **u).map(|(i, _)| format!("e{i}")).collect();
            expected.extend(flags.iter().enumerate().filter(|(_, u)| !**u).map(|(i, _)| format!("e{i}")));
            let mut got = Vec::new();
            while let Some(e) = q.pop() {
                got.push(e.content.functor);
            }
            prop_assert_eq!(got, expected);
        }
    }
}
