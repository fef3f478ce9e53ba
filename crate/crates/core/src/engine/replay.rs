//! Exemplar memory carried across stages.

use std::collections::BTreeMap;

use crate::registry::{CategoryId, CategoryRegistry};

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayEntry {
    pub embedding: Vec<f32>,
    pub category: CategoryId,
    /// Stage the exemplar was taken from.
    pub stage: usize,
}

/// Append-only buffer with a per-category cap. Categories are counted after
/// resolving registry links, so a discovered id and its ground-truth id share
/// one budget.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    budget: usize,
    entries: Vec<ReplayEntry>,
}

impl ReplayBuffer {
    pub fn new(budget: usize) -> Self {
        ReplayBuffer {
            budget,
            entries: Vec::new(),
        }
    }

    pub(crate) fn from_entries(budget: usize, entries: Vec<ReplayEntry>) -> Self {
        ReplayBuffer { budget, entries }
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ReplayEntry] {
        &self.entries
    }

    pub fn counts(&self, registry: &CategoryRegistry) -> BTreeMap<CategoryId, usize> {
        let mut m = BTreeMap::new();
        for e in &self.entries {
            *m.entry(registry.resolve(e.category)).or_insert(0) += 1;
        }
        m
    }

    /// Remaining room for `category`.
    pub fn room(&self, category: CategoryId, registry: &CategoryRegistry) -> usize {
        let target = registry.resolve(category);
        let used = self
            .entries
            .iter()
            .filter(|e| registry.resolve(e.category) == target)
            .count();
        self.budget.saturating_sub(used)
    }

    /// Appends `entry` if its category has room; returns whether it was kept.
    pub fn push(&mut self, entry: ReplayEntry, registry: &CategoryRegistry) -> bool {
        if self.room(entry.category, registry) == 0 {
            return false;
        }
        self.entries.push(entry);
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::Provenance;
    use proptest::prelude::*;

    fn entry(c: u32, stage: usize) -> ReplayEntry {
        ReplayEntry {
            embedding: vec![1.0, 0.0],
            category: CategoryId(c),
            stage,
        }
    }

    #[test]
    fn linked_ids_share_a_budget() {
        let mut reg = CategoryRegistry::new();
        let truth = reg.register(1, Provenance::Labeled, 0)[0];
        let found = reg.register(1, Provenance::Discovered, 1)[0];
        let mut buf = ReplayBuffer::new(2);
        assert!(buf.push(entry(found.0, 1), &reg));
        reg.link(found, truth).unwrap();
        assert!(buf.push(entry(truth.0, 1), &reg));
        assert!(!buf.push(entry(truth.0, 2), &reg));
        assert_eq!(buf.counts(&reg)[&truth], 2);
    }

    #[test]
    fn zero_budget_keeps_nothing() {
        let mut reg = CategoryRegistry::new();
        reg.register(1, Provenance::Labeled, 0);
        let mut buf = ReplayBuffer::new(0);
        assert!(!buf.push(entry(0, 0), &reg));
        assert!(buf.is_empty());
    }

    proptest! {
        #[test]
        fn grows_monotonically_within_cap(pushes in proptest::collection::vec((0u32..4, 0usize..4), 0..60), budget in 0usize..4) {
            let mut reg = CategoryRegistry::new();
            reg.register(4, Provenance::Labeled, 0);
            let mut buf = ReplayBuffer::new(budget);
            let mut prev: Vec<ReplayEntry> = Vec::new();
            for (c, s) in pushes {
                buf.push(entry(c, s), &reg);
                prop_assert!(buf.entries().starts_with(&prev));
                prop_assert!(buf.counts(&reg).values().all(|&n| n <= budget));
                prev = buf.entries().to_vec();
            }
        }
    }
}
