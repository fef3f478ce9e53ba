//! Global category bookkeeping shared by every stage of a run.

use std::fmt;

use crate::error::{Error, Result};

/// Dense global category identifier. Issued once, never renumbered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CategoryId(pub u32);

impl CategoryId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for CategoryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Where a category id came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// A ground-truth category supplied with labels.
    Labeled,
    /// Issued by density-peak discovery on unlabeled data.
    Discovered,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Labeled => "labeled",
            Provenance::Discovered => "discovered",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "labeled" => Some(Provenance::Labeled),
            "discovered" => Some(Provenance::Discovered),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryInfo {
    /// Stage index of first appearance.
    pub stage: usize,
    pub provenance: Provenance,
    /// Ground-truth id a discovered category was reconciled to.
    pub link: Option<CategoryId>,
    pub name: Option<String>,
}

/// Issues dense ids `0..next_id` and records their origin.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CategoryRegistry {
    entries: Vec<CategoryInfo>,
}

impl CategoryRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next_id(&self) -> u32 {
        self.entries.len() as u32
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Issues `count` fresh consecutive ids.
    pub fn register(&mut self, count: usize, provenance: Provenance, stage: usize) -> Vec<CategoryId> {
        let start = self.next_id();
        self.entries.extend((0..count).map(|_| CategoryInfo {
            stage,
            provenance,
            link: None,
            name: None,
        }));
        (start..self.next_id()).map(CategoryId).collect()
    }

    pub fn contains(&self, id: CategoryId) -> bool {
        id.index() < self.entries.len()
    }

    pub fn info(&self, id: CategoryId) -> Option<&CategoryInfo> {
        self.entries.get(id.index())
    }

    pub fn iter(&self) -> impl Iterator<Item = (CategoryId, &CategoryInfo)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, info)| (CategoryId(i as u32), info))
    }

    pub fn set_name(&mut self, id: CategoryId, name: impl Into<String>) -> Result<()> {
        let entry = self
            .entries
            .get_mut(id.index())
            .ok_or_else(|| Error::Argument(format!("unknown category {id}")))?;
        entry.name = Some(name.into());
        Ok(())
    }

    /// Records that discovered category `discovered` is ground-truth category `truth`.
    pub fn link(&mut self, discovered: CategoryId, truth: CategoryId) -> Result<()> {
        match self.info(truth) {
            None => return Err(Error::Argument(format!("unknown category {truth}"))),
            Some(info) if info.provenance != Provenance::Labeled => {
                return Err(Error::State(format!(
                    "link target {truth} is not a ground-truth category"
                )))
            }
            Some(_) => {}
        }
        let entry = self
            .entries
            .get_mut(discovered.index())
            .ok_or_else(|| Error::Argument(format!("unknown category {discovered}")))?;
        if entry.provenance != Provenance::Discovered {
            return Err(Error::State(format!("category {discovered} was not discovered")));
        }
        entry.link = Some(truth);
        Ok(())
    }

    /// The id predictions under `id` should be reported as: the linked
    /// ground-truth id if one was recorded, else `id` itself.
    pub fn resolve(&self, id: CategoryId) -> CategoryId {
        self.info(id).and_then(|info| info.link).unwrap_or(id)
    }

    /// Rebuilds a registry from stored entries (checkpoint loading).
    pub(crate) fn from_entries(entries: Vec<CategoryInfo>) -> Result<Self> {
        let n = entries.len();
        if let Some(bad) = entries
            .iter()
            .filter_map(|e| e.link)
            .find(|l| l.index() >= n)
        {
            return Err(Error::Data(format!("registry link to unknown category {bad}")));
        }
        Ok(CategoryRegistry { entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_dense_from_zero() {
        let mut reg = CategoryRegistry::new();
        let ids = reg.register(3, Provenance::Labeled, 0);
        assert_eq!(ids, vec![CategoryId(0), CategoryId(1), CategoryId(2)]);
        assert_eq!(reg.next_id(), 3);
    }

    #[test]
    fn continues_from_next_id() {
        let mut reg = CategoryRegistry::new();
        reg.register(5, Provenance::Labeled, 0);
        assert_eq!(reg.register(1, Provenance::Discovered, 1), vec![CategoryId(5)]);
    }

    #[test]
    fn successive_calls_never_reuse() {
        let mut reg = CategoryRegistry::new();
        let a = reg.register(2, Provenance::Labeled, 0);
        let b = reg.register(2, Provenance::Labeled, 1);
        assert_eq!(a, vec![CategoryId(0), CategoryId(1)]);
        assert_eq!(b, vec![CategoryId(2), CategoryId(3)]);
    }

    #[test]
    fn link_keeps_discovered_id() {
        let mut reg = CategoryRegistry::new();
        let truth = reg.register(1, Provenance::Labeled, 0)[0];
        let found = reg.register(1, Provenance::Discovered, 1)[0];
        reg.link(found, truth).unwrap();
        assert_eq!(found, CategoryId(1));
        assert_eq!(reg.resolve(found), truth);
        assert_eq!(reg.resolve(truth), truth);
        assert!(reg.link(truth, found).is_err());
    }
}
