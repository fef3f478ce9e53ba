//! Soft nearest-neighbor classification over a labeled support set.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{ReplaySelect, RunConfig, SupportSelect};
use crate::dataset::{RowSource, StageDataset};
use crate::embedding::{dot, normalize_in_place, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::ingest::{decode_binary, encode_binary, VERSION_SUPPORT};
use crate::neighbors::{build_knn_graph, compute_density};
use crate::registry::{CategoryId, CategoryRegistry};

#[derive(Debug, Clone, PartialEq)]
pub struct SupportEntry {
    /// Unit-norm feature vector.
    pub embedding: Vec<f32>,
    pub label: CategoryId,
}

fn canonical(a: &SupportEntry, b: &SupportEntry) -> Ordering {
    a.label.cmp(&b.label).then_with(|| {
        a.embedding
            .iter()
            .zip(&b.embedding)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

fn unit_f32(row: &[f32]) -> Vec<f32> {
    let mut v: Vec<f64> = row.iter().map(|&x| x as f64).collect();
    normalize_in_place(&mut v);
    v.into_iter().map(|x| x as f32).collect()
}

/// Labeled exemplars defining the classifier, kept in canonical order
/// (category id, then embedding contents) so that predictions do not depend
/// on insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportSet {
    d: usize,
    budget: usize,
    entries: Vec<SupportEntry>,
}

impl SupportSet {
    pub fn new(d: usize, budget: usize) -> Self {
        SupportSet {
            d,
            budget,
            entries: Vec::new(),
        }
    }

    /// Builds a support set, normalizing every embedding.
    pub fn from_entries(d: usize, budget: usize, entries: Vec<(Vec<f32>, CategoryId)>) -> Result<Self> {
        let mut s = SupportSet::new(d, budget);
        s.insert(entries)?;
        Ok(s)
    }

    fn insert(&mut self, entries: Vec<(Vec<f32>, CategoryId)>) -> Result<()> {
        for (e, label) in entries {
            if e.len() != self.d {
                return Err(Error::Argument(format!(
                    "support entry has dimension {}, expected {}",
                    e.len(),
                    self.d
                )));
            }
            self.entries.push(SupportEntry {
                embedding: unit_f32(&e),
                label,
            });
        }
        self.entries.sort_by(canonical);
        let counts = self.counts();
        if let Some((c, n)) = counts.iter().find(|&(_, &n)| n > self.budget) {
            return Err(Error::State(format!(
                "category {c} has {n} support entries, budget is {}",
                self.budget
            )));
        }
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    /// `N^S`.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[SupportEntry] {
        &self.entries
    }

    /// The categories present, ascending; prediction vectors use this order.
    pub fn categories(&self) -> Vec<CategoryId> {
        let set: BTreeSet<CategoryId> = self.entries.iter().map(|e| e.label).collect();
        set.into_iter().collect()
    }

    /// `K^S`.
    pub fn category_count(&self) -> usize {
        self.categories().len()
    }

    pub fn counts(&self) -> BTreeMap<CategoryId, usize> {
        let mut m = BTreeMap::new();
        for e in &self.entries {
            *m.entry(e.label).or_insert(0) += 1;
        }
        m
    }

    /// Categories and, for each entry, the position of its label among them.
    pub fn label_positions(&self) -> (Vec<CategoryId>, Vec<usize>) {
        let cats = self.categories();
        let pos = self
            .entries
            .iter()
            .map(|e| cats.binary_search(&e.label).unwrap())
            .collect();
        (cats, pos)
    }

    pub fn validate(&self, registry: &CategoryRegistry) -> Result<()> {
        match self.entries.iter().find(|e| !registry.contains(e.label)) {
            Some(e) => Err(Error::State(format!("support label {} is not registered", e.label))),
            None => Ok(()),
        }
    }

    /// Copy without the entries for which `drop` holds.
    pub fn without(&self, drop: impl Fn(&SupportEntry) -> bool) -> SupportSet {
        SupportSet {
            d: self.d,
            budget: self.budget,
            entries: self.entries.iter().filter(|e| !drop(e)).cloned().collect(),
        }
    }

    /// Copy with more entries. Fails when a category would exceed the budget.
    pub fn with(&self, entries: Vec<(Vec<f32>, CategoryId)>) -> Result<SupportSet> {
        let mut s = self.clone();
        s.insert(entries)?;
        Ok(s)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.is_empty() {
            return Err(Error::State("cannot serialize an empty support set".into()));
        }
        let data = self.entries.iter().flat_map(|e| e.embedding.iter().copied()).collect();
        let m = EmbeddingMatrix::new(self.len(), self.d, data)?;
        let labels: Vec<CategoryId> = self.entries.iter().map(|e| e.label).collect();
        encode_binary(VERSION_SUPPORT, &m, Some(&labels), Some(&self.categories()))
    }

    /// Decodes a support record. Entries are taken as stored, without renormalizing.
    pub fn from_bytes(bytes: &[u8], budget: usize) -> Result<SupportSet> {
        let rec = decode_binary(bytes)?;
        if rec.version != VERSION_SUPPORT {
            return Err(Error::Data(format!("expected a support record, got version {}", rec.version)));
        }
        let labels = rec.labels.ok_or_else(|| Error::Data("support record has no labels".into()))?;
        let mut entries: Vec<SupportEntry> = rec
            .matrix
            .rows()
            .zip(labels)
            .map(|(r, label)| SupportEntry {
                embedding: r.to_vec(),
                label,
            })
            .collect();
        entries.sort_by(canonical);
        let s = SupportSet {
            d: rec.matrix.d(),
            budget,
            entries,
        };
        if rec.categories.as_deref() != Some(s.categories().as_slice()) {
            return Err(Error::Data("support category table disagrees with labels".into()));
        }
        if s.counts().values().any(|&n| n > budget) {
            return Err(Error::Data("support record exceeds the per-category budget".into()));
        }
        Ok(s)
    }
}

/// Softmax of `logits` with max subtraction.
pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

/// Class probabilities of one query, ordered as [`SupportSet::categories`].
/// The query is normalized first, so scores are cosine similarities.
pub fn snn_predict(query: &[f64], support: &SupportSet, tau: f64) -> Result<Vec<f64>> {
    if support.is_empty() {
        return Err(Error::State("prediction with an empty support set".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::Argument(format!("temperature must be positive, got {tau}")));
    }
    if query.len() != support.d {
        return Err(Error::Argument(format!(
            "query has dimension {}, support has {}",
            query.len(),
            support.d
        )));
    }
    let (cats, pos) = support.label_positions();
    Ok(predict_with(query, support, &pos, cats.len(), tau))
}

fn predict_with(query: &[f64], support: &SupportSet, pos: &[usize], k: usize, tau: f64) -> Vec<f64> {
    let mut q = query.to_vec();
    normalize_in_place(&mut q);
    let logits: Vec<f64> = support
        .entries
        .iter()
        .map(|e| {
            let h: Vec<f64> = e.embedding.iter().map(|&x| x as f64).collect();
            dot(&q, &h) / tau
        })
        .collect();
    let w = softmax(&logits);
    let mut p = vec![0.0; k];
    for (wk, &c) in w.iter().zip(pos) {
        p[c] += wk;
    }
    p
}

/// Row-wise [`snn_predict`]; parallel over queries.
pub fn snn_predict_batch(queries: &[Vec<f64>], support: &SupportSet, tau: f64) -> Result<Vec<Vec<f64>>> {
    if queries.is_empty() {
        return Ok(Vec::new());
    }
    snn_predict(&queries[0], support, tau)?;
    if let Some(q) = queries.iter().find(|q| q.len() != support.d) {
        return Err(Error::Argument(format!("query has dimension {}, support has {}", q.len(), support.d)));
    }
    let (cats, pos) = support.label_positions();
    Ok(queries
        .par_iter()
        .map(|q| predict_with(q, support, &pos, cats.len(), tau))
        .collect())
}

/// Highest-probability position, lowest position on ties.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Predicted category of each query.
pub fn snn_classify(queries: &[Vec<f64>], support: &SupportSet, tau: f64) -> Result<Vec<CategoryId>> {
    let cats = support.categories();
    Ok(snn_predict_batch(queries, support, tau)?
        .iter()
        .map(|p| cats[argmax(p)])
        .collect())
}

/// How representatives of a category are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    /// Highest intra-category density first.
    Density,
    /// Uniform without replacement.
    Random,
    /// Closest to the normalized category mean first.
    Centroid,
}

impl From<SupportSelect> for Selection {
    fn from(s: SupportSelect) -> Self {
        match s {
            SupportSelect::Density => Selection::Density,
            SupportSelect::Random => Selection::Random,
        }
    }
}

impl From<ReplaySelect> for Selection {
    fn from(s: ReplaySelect) -> Self {
        match s {
            ReplaySelect::Density => Selection::Density,
            ReplaySelect::Centroid => Selection::Centroid,
        }
    }
}

fn rank_desc(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Picks up to `budget` points of one category; returns local indices.
pub fn select_from_category(
    points: &[Vec<f64>],
    budget: usize,
    method: Selection,
    k_density: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let n = points.len();
    if n <= budget {
        return Ok((0..n).collect());
    }
    if budget == 0 {
        return Ok(Vec::new());
    }
    let picked = match method {
        Selection::Random => {
            let mut v = index::sample(rng, n, budget).into_vec();
            v.sort_unstable();
            v
        }
        Selection::Density => {
            let m = EmbeddingMatrix::from_f64_rows(points)?;
            let g = build_knn_graph(&m, k_density.min(n - 1).max(1))?;
            let mut order = rank_desc(&compute_density(&g));
            order.truncate(budget);
            order
        }
        Selection::Centroid => {
            let d = points[0].len();
            let mut mean = vec![0.0; d];
            for p in points {
                let mut u = p.clone();
                normalize_in_place(&mut u);
                mean.iter_mut().zip(&u).for_each(|(m, x)| *m += x);
            }
            normalize_in_place(&mut mean);
            let scores: Vec<f64> = points
                .iter()
                .map(|p| {
                    let mut u = p.clone();
                    normalize_in_place(&mut u);
                    dot(&u, &mean)
                })
                .collect();
            let mut order = rank_desc(&scores);
            order.truncate(budget);
            order
        }
    };
    Ok(picked)
}

/// Applies [`select_from_category`] to each category of `labels`, judging
/// points by `features`. Returns indices into `labels`, grouped by ascending
/// category.
pub fn select_per_category(
    features: &[Vec<f64>],
    labels: &[CategoryId],
    budget: usize,
    method: Selection,
    k_density: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    if features.len() != labels.len() {
        return Err(Error::Argument("features and labels differ in length".into()));
    }
    let mut groups: BTreeMap<CategoryId, Vec<usize>> = BTreeMap::new();
    for (i, &c) in labels.iter().enumerate() {
        groups.entry(c).or_default().push(i);
    }
    let mut out = Vec::new();
    for members in groups.values() {
        let pts: Vec<Vec<f64>> = members.iter().map(|&i| features[i].clone()).collect();
        for local in select_from_category(&pts, budget, method, k_density, rng)? {
            out.push(members[local]);
        }
    }
    Ok(out)
}

/// Support entries for every labeled category of `stage`, chosen in the raw
/// embedding space by `config.support_select`.
pub fn select_support_labeled<R: RowSource>(
    stage: &StageDataset,
    embeddings: &R,
    config: &RunConfig,
    registry: &CategoryRegistry,
    rng: &mut ChaCha8Rng,
) -> Result<SupportSet> {
    let features: Vec<Vec<f64>> = stage
        .labeled
        .iter()
        .map(|&(i, _)| embeddings.row(i).iter().map(|&x| x as f64).collect())
        .collect();
    let labels: Vec<CategoryId> = stage.labeled.iter().map(|&(_, c)| c).collect();
    let picked = select_per_category(
        &features,
        &labels,
        config.support_per_category,
        config.support_select.into(),
        config.k_density,
        rng,
    )?;
    let entries = picked
        .into_iter()
        .map(|j| (embeddings.row(stage.labeled[j].0).to_vec(), labels[j]))
        .collect();
    let s = SupportSet::from_entries(embeddings.d(), config.support_per_category, entries)?;
    s.validate(registry)?;
    Ok(s)
}

/// Adds discovered categories. Their ids must be registered and not yet in
/// the support set; existing entries are untouched.
pub fn extend_support<R: RowSource>(
    support: &SupportSet,
    discovered: &[(usize, CategoryId)],
    embeddings: &R,
    registry: &CategoryRegistry,
) -> Result<SupportSet> {
    let present = support.categories();
    if let Some(&(_, c)) = discovered
        .iter()
        .find(|(_, c)| !registry.contains(*c) || present.binary_search(c).is_ok())
    {
        return Err(Error::State(format!("category {c} is not a fresh registered id")));
    }
    support.with(
        discovered
            .iter()
            .map(|&(i, c)| (embeddings.row(i).to_vec(), c))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{generate_benchmark, SyntheticSpec};
    use crate::registry::Provenance;
    use crate::rng::{stream, Stream};
    use proptest::prelude::*;
    use rand::Rng;

    fn c(i: u32) -> CategoryId {
        CategoryId(i)
    }

    fn angle(deg: f64) -> Vec<f32> {
        let r = deg.to_radians();
        vec![r.cos() as f32, r.sin() as f32]
    }

    #[test]
    fn single_entry_is_one_hot() {
        let s = SupportSet::from_entries(2, 5, vec![(angle(10.0), c(3))]).unwrap();
        assert_eq!(snn_predict(&[1.0, 0.0], &s, 0.1).unwrap(), vec![1.0]);
    }

    #[test]
    fn equidistant_entries_split_evenly() {
        let s = SupportSet::from_entries(2, 5, vec![(angle(30.0), c(0)), (angle(-30.0), c(1))]).unwrap();
        let p = snn_predict(&[1.0, 0.0], &s, 0.1).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-7 && (p[1] - 0.5).abs() < 1e-7);
    }

    #[test]
    fn three_entry_fixture_matches_direct_evaluation() {
        let entries = vec![(angle(0.0), c(0)), (angle(50.0), c(1)), (angle(100.0), c(1))];
        let s = SupportSet::from_entries(2, 5, entries).unwrap();
        let q = [0.6, 0.8];
        let p = snn_predict(&q, &s, 0.1).unwrap();
        // Direct transcription without max subtraction, compensated sums.
        let sims: Vec<f64> = s
            .entries()
            .iter()
            .map(|e| (q[0] * e.embedding[0] as f64 + q[1] * e.embedding[1] as f64) / 0.1)
            .collect();
        let ex: Vec<f64> = sims.iter().map(|v| v.exp()).collect();
        let mut total = 0.0f64;
        let mut comp = 0.0f64;
        for &v in &ex {
            let t = total + v;
            comp += if total.abs() >= v.abs() { (total - t) + v } else { (v - t) + total };
            total = t;
        }
        let total = total + comp;
        let expect = [ex[0] / total, (ex[1] + ex[2]) / total];
        assert!((p[0] - expect[0]).abs() < 1e-12);
        assert!((p[1] - expect[1]).abs() < 1e-12);
    }

    fn random_support(seed: u64, cats: u32, per: usize, d: usize) -> SupportSet {
        let mut rng = stream(seed, Stream::Selection);
        let entries = (0..cats)
            .flat_map(|k| (0..per).map(move |_| k))
            .map(|k| ((0..d).map(|_| rng.random_range(-1.0f32..1.0)).collect(), c(k)))
            .collect();
        SupportSet::from_entries(d, per, entries).unwrap()
    }

    #[test]
    fn batch_matches_single_queries() {
        let s = random_support(1, 4, 3, 6);
        let mut rng = stream(2, Stream::Selection);
        let qs: Vec<Vec<f64>> = (0..100).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let batch = snn_predict_batch(&qs, &s, 0.1).unwrap();
        for (q, row) in qs.iter().zip(&batch) {
            let single = snn_predict(q, &s, 0.1).unwrap();
            let diff = single.iter().zip(row).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-12);
        }
        assert!(snn_predict_batch(&[], &s, 0.1).unwrap().is_empty());
    }

    #[test]
    fn empty_support_is_a_state_error() {
        let s = SupportSet::new(2, 5);
        assert_eq!(snn_predict(&[1.0, 0.0], &s, 0.1).unwrap_err().exit_code(), 4);
    }

    #[test]
    fn low_temperature_matches_hard_nearest_neighbor() {
        let s = random_support(3, 5, 4, 8);
        let mut rng = stream(4, Stream::Selection);
        let mut checked = 0;
        while checked < 200 {
            let q: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut u = q.clone();
            normalize_in_place(&mut u);
            let mut sims: Vec<(f64, CategoryId)> = s
                .entries()
                .iter()
                .map(|e| (dot(&u, &e.embedding.iter().map(|&x| x as f64).collect::<Vec<_>>()), e.label))
                .collect();
            sims.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
            if sims[0].0 - sims[1].0 < 1e-3 {
                continue;
            }
            assert_eq!(snn_classify(&[q], &s, 1e-4).unwrap()[0], sims[0].1);
            checked += 1;
        }
    }

    #[test]
    fn high_temperature_gives_label_frequencies() {
        let entries = vec![(angle(0.0), c(0)), (angle(90.0), c(1)), (angle(200.0), c(1)), (angle(300.0), c(2))];
        let s = SupportSet::from_entries(2, 5, entries).unwrap();
        let p = snn_predict(&[0.3, -0.7], &s, 1e4).unwrap();
        for (got, want) in p.iter().zip([0.25, 0.5, 0.25]) {
            assert!((got - want).abs() < 1e-3);
        }
    }

    #[test]
    fn argmax_breaks_ties_toward_lowest_id() {
        assert_eq!(argmax(&[0.25, 0.5, 0.5]), 1);
    }

    #[test]
    fn budget_is_enforced() {
        let entries = vec![(angle(0.0), c(0)), (angle(1.0), c(0))];
        assert_eq!(SupportSet::from_entries(2, 1, entries).unwrap_err().exit_code(), 4);
    }

    fn labeled_stage(per_cat: &[usize]) -> (EmbeddingMatrix, StageDataset, CategoryRegistry) {
        let mut reg = CategoryRegistry::new();
        let ids = reg.register(per_cat.len(), Provenance::Labeled, 0);
        let mut rng = stream(9, Stream::Generation);
        let mut rows = Vec::new();
        let mut stage = StageDataset::default();
        for (k, &n) in per_cat.iter().enumerate() {
            for _ in 0..n {
                stage.labeled.push((rows.len(), ids[k]));
                rows.push((0..4).map(|_| rng.random_range(-1.0f32..1.0)).collect::<Vec<f32>>());
            }
        }
        (EmbeddingMatrix::from_rows(&rows).unwrap(), stage, reg)
    }

    #[test]
    fn small_categories_are_taken_whole() {
        let (m, stage, reg) = labeled_stage(&[5, 2]);
        let s = select_support_labeled(&stage, &m, &RunConfig::default(), &reg, &mut stream(0, Stream::Selection)).unwrap();
        assert_eq!(s.counts()[&c(0)], 5);
        assert_eq!(s.counts()[&c(1)], 2);
    }

    #[test]
    fn density_supports_come_from_the_top_decile() {
        let spec = SyntheticSpec {
            eval_per_category: 0,
            ..SyntheticSpec::single_stage(3, 100, 16, 5)
        };
        let b = generate_benchmark(&spec).unwrap();
        let cfg = RunConfig::default();
        let s = select_support_labeled(&b.stages[0], &b.embeddings, &cfg, &b.registry, &mut stream(0, Stream::Selection))
            .unwrap();
        for cat in b.registry.iter().map(|(id, _)| id) {
            let rows: Vec<Vec<f64>> = b.stages[0]
                .labeled
                .iter()
                .filter(|(_, l)| *l == cat)
                .map(|&(i, _)| b.embeddings.row_f64(i))
                .collect();
            // Brute-force density: mean of the 10 largest cosine similarities to others.
            let unit: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| {
                    let mut u = r.clone();
                    normalize_in_place(&mut u);
                    u
                })
                .collect();
            let dens: Vec<f64> = (0..unit.len())
                .map(|i| {
                    let mut sims: Vec<f64> = (0..unit.len()).filter(|&j| j != i).map(|j| dot(&unit[i], &unit[j])).collect();
                    sims.sort_by(|a, b| b.partial_cmp(a).unwrap());
                    sims[..10].iter().sum::<f64>() / 10.0
                })
                .collect();
            let mut sorted = dens.clone();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let cutoff = sorted[rows.len() / 10 - 1];
            for e in s.entries().iter().filter(|e| e.label == cat) {
                let j = unit
                    .iter()
                    .position(|u| u.iter().zip(&e.embedding).all(|(a, b)| (*a as f32 - b).abs() < 1e-6))
                    .unwrap();
                assert!(dens[j] >= cutoff - 1e-6);
            }
        }
    }

    #[test]
    fn random_selection_respects_budget() {
        let (m, stage, reg) = labeled_stage(&[20, 9]);
        let cfg = RunConfig {
            support_select: SupportSelect::Random,
            ..RunConfig::default()
        };
        let s = select_support_labeled(&stage, &m, &cfg, &reg, &mut stream(0, Stream::Selection)).unwrap();
        assert_eq!(s.len(), 10);
    }

    #[test]
    fn centroid_selection_prefers_the_mean() {
        let pts = vec![vec![1.0, 0.0], vec![0.8, 0.6], vec![0.6, 0.8], vec![0.0, 1.0]];
        let got = select_from_category(&pts, 2, Selection::Centroid, 2, &mut stream(0, Stream::Selection)).unwrap();
        assert_eq!(got, vec![1, 2]);
    }

    #[test]
    fn extension_widens_and_renormalizes() {
        let s = random_support(5, 2, 5, 4);
        let mut reg = CategoryRegistry::new();
        reg.register(2, Provenance::Labeled, 0);
        let fresh = reg.register(1, Provenance::Discovered, 1)[0];
        let m = EmbeddingMatrix::from_rows(&vec![vec![0.1, 0.9, -0.2, 0.3]; 5]).unwrap();
        let added: Vec<(usize, CategoryId)> = (0..5).map(|i| (i, fresh)).collect();
        let ext = extend_support(&s, &added, &m, &reg).unwrap();
        assert_eq!(ext.category_count(), 3);
        assert_eq!(ext.len(), s.len() + 5);
        assert_eq!(extend_support(&s, &[], &m, &reg).unwrap(), s);

        let q = [0.4, -0.1, 0.7, 0.2];
        let before = snn_predict(&q, &s, 0.1).unwrap();
        let after = snn_predict(&q, &ext, 0.1).unwrap();
        let old_mass = after[0] + after[1];
        for k in 0..2 {
            assert!((after[k] / old_mass - before[k]).abs() < 1e-9);
        }
        assert!(extend_support(&ext, &added, &m, &reg).is_err());
    }

    #[test]
    fn serialization_round_trips() {
        let s = random_support(7, 3, 2, 5);
        let back = SupportSet::from_bytes(&s.to_bytes().unwrap(), 2).unwrap();
        assert_eq!(back, s);
        assert!(SupportSet::from_bytes(&s.to_bytes().unwrap(), 1).is_err());
    }

    proptest! {
        #[test]
        fn predictions_lie_on_the_simplex(seed in 0u64..1000, tau in 0.01f64..10.0) {
            let s = random_support(seed, 3, 4, 5);
            let mut rng = stream(seed, Stream::Perturbation);
            let q: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let p = snn_predict(&q, &s, tau).unwrap();
            prop_assert!(p.iter().all(|&v| v >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn entry_order_never_matters(seed in 0u64..1000) {
            let mut rng = stream(seed, Stream::Batching);
            let original: Vec<(Vec<f32>, CategoryId)> = (0..9)
                .map(|k| ((0..4).map(|_| rng.random_range(-1.0f32..1.0)).collect(), c(k % 3)))
                .collect();
            let s = SupportSet::from_entries(4, 3, original.clone()).unwrap();
            let mut entries = original;
            for i in (1..entries.len()).rev() {
                let j = rng.random_range(0..=i);
                entries.swap(i, j);
            }
            let shuffled = SupportSet::from_entries(4, 3, entries).unwrap();
            let q = [0.3, -0.2, 0.9, 0.1];
            prop_assert_eq!(snn_predict(&q, &s, 0.1).unwrap(), snn_predict(&q, &shuffled, 0.1).unwrap());
        }
    }
}
