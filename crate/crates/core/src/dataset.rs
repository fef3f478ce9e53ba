//! Per-stage datasets and an access-audited view over the shared embedding
//! matrix.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::registry::{CategoryId, CategoryRegistry};

/// One incremental stage. Row indices refer to a shared [`EmbeddingMatrix`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StageDataset {
    pub stage: usize,
    pub labeled: Vec<(usize, CategoryId)>,
    pub unlabeled: Vec<usize>,
    /// Held-out labels of `unlabeled`; only the evaluator and the label
    /// reveal step may read these.
    pub ground_truth: BTreeMap<usize, CategoryId>,
    /// Disjoint evaluation split covering every category seen so far.
    pub eval: Vec<(usize, CategoryId)>,
}

impl StageDataset {
    pub fn validate(&self, registry: &CategoryRegistry) -> Result<()> {
        let labeled: BTreeSet<usize> = self.labeled.iter().map(|&(i, _)| i).collect();
        let unlabeled: BTreeSet<usize> = self.unlabeled.iter().copied().collect();
        if labeled.len() != self.labeled.len() || unlabeled.len() != self.unlabeled.len() {
            return Err(Error::Data(format!("stage {}: duplicate row indices", self.stage)));
        }
        if let Some(i) = labeled.intersection(&unlabeled).next() {
            return Err(Error::Data(format!(
                "stage {}: row {i} is both labeled and unlabeled",
                self.stage
            )));
        }
        if let Some(&(_, c)) = self.labeled.iter().find(|(_, c)| !registry.contains(*c)) {
            return Err(Error::Data(format!(
                "stage {}: labeled category {c} is not registered",
                self.stage
            )));
        }
        let gt_keys: BTreeSet<usize> = self.ground_truth.keys().copied().collect();
        if gt_keys != unlabeled {
            return Err(Error::Data(format!(
                "stage {}: ground truth must cover exactly the unlabeled rows",
                self.stage
            )));
        }
        Ok(())
    }

    /// `C_lab^t`: categories with labeled rows in this stage.
    pub fn labeled_categories(&self) -> BTreeSet<CategoryId> {
        self.labeled.iter().map(|&(_, c)| c).collect()
    }

    /// `C_unlab^t`: categories of the unlabeled rows (from ground truth).
    pub fn unlabeled_categories(&self) -> BTreeSet<CategoryId> {
        self.ground_truth.values().copied().collect()
    }

    /// Every row index this stage may touch.
    pub fn rows(&self) -> BTreeSet<usize> {
        self.labeled
            .iter()
            .map(|&(i, _)| i)
            .chain(self.unlabeled.iter().copied())
            .chain(self.eval.iter().map(|&(i, _)| i))
            .collect()
    }
}

/// Anything that hands out embedding rows by index.
pub trait RowSource {
    fn d(&self) -> usize;
    fn row(&self, i: usize) -> &[f32];
}

impl RowSource for EmbeddingMatrix {
    fn d(&self) -> usize {
        EmbeddingMatrix::d(self)
    }

    fn row(&self, i: usize) -> &[f32] {
        EmbeddingMatrix::row(self, i)
    }
}

impl RowSource for AuditedEmbeddings<'_> {
    fn d(&self) -> usize {
        AuditedEmbeddings::d(self)
    }

    fn row(&self, i: usize) -> &[f32] {
        AuditedEmbeddings::row(self, i)
    }
}

/// Read access to an embedding matrix restricted to one stage's rows.
///
/// Reads outside the allowed set are counted so tests can assert that no
/// stage touches another stage's samples except through the support set and
/// replay buffer.
#[derive(Debug)]
pub struct AuditedEmbeddings<'a> {
    matrix: &'a EmbeddingMatrix,
    allowed: Vec<bool>,
    violations: AtomicUsize,
}

impl<'a> AuditedEmbeddings<'a> {
    pub fn new(matrix: &'a EmbeddingMatrix, stage: &StageDataset) -> Self {
        let mut allowed = vec![false; matrix.n()];
        for i in stage.rows() {
            if i < allowed.len() {
                allowed[i] = true;
            }
        }
        AuditedEmbeddings {
            matrix,
            allowed,
            violations: AtomicUsize::new(0),
        }
    }

    pub fn d(&self) -> usize {
        self.matrix.d()
    }

    pub fn row(&self, i: usize) -> &'a [f32] {
        if !self.allowed.get(i).copied().unwrap_or(false) {
            self.violations.fetch_add(1, Ordering::Relaxed);
        }
        self.matrix.row(i)
    }

    pub fn select_rows(&self, indices: &[usize]) -> Result<EmbeddingMatrix> {
        let mut data = Vec::with_capacity(indices.len() * self.d());
        for &i in indices {
            if i >= self.matrix.n() {
                return Err(Error::Argument(format!("row {i} out of range")));
            }
            data.extend_from_slice(self.row(i));
        }
        EmbeddingMatrix::new(indices.len(), self.d(), data)
    }

    pub fn violations(&self) -> usize {
        self.violations.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::Provenance;

    fn stage() -> (StageDataset, CategoryRegistry) {
        let mut reg = CategoryRegistry::new();
        let ids = reg.register(2, Provenance::Labeled, 0);
        let s = StageDataset {
            stage: 1,
            labeled: vec![(0, ids[0])],
            unlabeled: vec![1, 2],
            ground_truth: [(1, ids[0]), (2, ids[1])].into_iter().collect(),
            eval: vec![(3, ids[1])],
        };
        (s, reg)
    }

    #[test]
    fn valid_stage_passes() {
        let (s, reg) = stage();
        s.validate(&reg).unwrap();
        assert_eq!(s.labeled_categories().len(), 1);
        assert_eq!(s.unlabeled_categories().len(), 2);
    }

    #[test]
    fn overlap_is_rejected() {
        let (mut s, reg) = stage();
        s.unlabeled.push(0);
        s.ground_truth.insert(0, CategoryId(0));
        assert!(s.validate(&reg).is_err());
    }

    #[test]
    fn ground_truth_must_match_unlabeled() {
        let (mut s, reg) = stage();
        s.ground_truth.remove(&2);
        assert!(s.validate(&reg).is_err());
    }

    #[test]
    fn audit_counts_foreign_rows() {
        let (s, _) = stage();
        let m = EmbeddingMatrix::new(5, 2, vec![0.5; 10]).unwrap();
        let view = AuditedEmbeddings::new(&m, &s);
        view.row(0);
        view.row(3);
        assert_eq!(view.violations(), 0);
        view.row(4);
        assert_eq!(view.violations(), 1);
    }
}
