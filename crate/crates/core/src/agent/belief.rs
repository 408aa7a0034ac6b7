use indexmap::IndexSet;

use crate::term::{unify_literals, Bindings, Literal};

/// Set of ground beliefs, iterated in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BeliefBase {
    items: IndexSet<Literal>,
}

impl BeliefBase {
    /// Returns true when the belief was not present before.
    pub fn insert(&mut self, belief: Literal) -> bool {
        debug_assert!(belief.is_ground());
        self.items.insert(belief)
    }

    pub fn remove(&mut self, belief: &Literal) -> bool {
        self.items.shift_remove(belief)
    }

    /// Removes the first belief unifying with `pattern`.
    pub fn remove_matching(&mut self, pattern: &Literal) -> Option<Literal> {
        let hit = self
            .items
            .iter()
            .find(|b| unify_literals(pattern, b, &mut Bindings::default()))
            .cloned()?;
        self.items.shift_remove(&hit);
        Some(hit)
    }

    pub fn contains(&self, belief: &Literal) -> bool {
        self.items.contains(belief)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Literal> {
        self.items.iter()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}
