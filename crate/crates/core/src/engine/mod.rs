//! Stage-by-stage orchestration: initial supervised training, per-stage
//! fine-tuning, category discovery, support and replay maintenance, and the
//! label reveal between IGCD-l stages.

mod checkpoint;
mod replay;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use replay::{ReplayBuffer, ReplayEntry};

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::{Mode, RunConfig};
use crate::dataset::{AuditedEmbeddings, RowSource, StageDataset};
use crate::discovery::{dedup_peaks, find_density_peaks, pseudo_label_peaks};
use crate::embedding::{dot, normalize_in_place, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::eval::{clustering_accuracy, final_discovery, max_forgetting, stage_report, CategoryHistory, StageReport};
use crate::ingest::Benchmark;
use crate::losses::{total_loss, Batch, ClassifierSupport, Projector, Schedule, Sgd};
use crate::neighbors::{build_knn_graph, compute_density};
use crate::registry::{CategoryId, CategoryRegistry, Provenance};
use crate::rng::{stream, Stream};
use crate::snn::{select_from_category, select_support_labeled, snn_classify, SupportSet};

/// Everything a run carries from one stage to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineState {
    pub projector: Projector,
    pub support: SupportSet,
    pub replay: ReplayBuffer,
    pub registry: CategoryRegistry,
    /// Last completed stage; `None` before initial training.
    pub stage: Option<usize>,
    pub(crate) batching: ChaCha8Rng,
    pub(crate) perturbation: ChaCha8Rng,
    pub(crate) selection: ChaCha8Rng,
}

/// Side information from one round of fine-tuning.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub steps: usize,
    pub skipped_steps: usize,
    pub labeled_resampled: bool,
    pub unlabeled_resampled: bool,
    pub final_loss: Option<f64>,
}

impl TrainLog {
    fn flags(&self) -> Vec<String> {
        let mut f = Vec::new();
        if self.labeled_resampled {
            f.push("labeled_resampled".to_string());
        }
        if self.unlabeled_resampled {
            f.push("unlabeled_resampled".to_string());
        }
        if self.skipped_steps > 0 {
            f.push(format!("skipped_steps:{}", self.skipped_steps));
        }
        f
    }
}

/// Result of density-peak discovery on one stage's unlabeled data.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Discovery {
    /// Peaks surviving suppression, as row indices.
    pub kept: Vec<usize>,
    /// Kept peaks that fell inside an already known category.
    pub known: Vec<usize>,
    /// Novel peaks with their fresh ids.
    pub peaks: Vec<(usize, CategoryId)>,
    /// `(row, fresh id)` for every novel peak and its pseudo-labeled neighbors.
    pub labeled: Vec<(usize, CategoryId)>,
    pub new_categories: Vec<CategoryId>,
}

/// Walks a pool in shuffled passes, or with replacement when the pool is
/// smaller than a half-batch.
struct Sampler {
    n: usize,
    order: Vec<usize>,
    pos: usize,
}

impl Sampler {
    fn new(n: usize) -> Self {
        Sampler {
            n,
            order: Vec::new(),
            pos: n,
        }
    }

    fn draw(&mut self, count: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, bool) {
        if self.n == 0 || count == 0 {
            return (Vec::new(), false);
        }
        if self.n < count {
            return ((0..count).map(|_| rng.random_range(0..self.n)).collect(), true);
        }
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            if self.pos == self.n {
                self.order = (0..self.n).collect();
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        (out, false)
    }
}

fn to_f64(row: &[f32]) -> Vec<f64> {
    row.iter().map(|&x| x as f64).collect()
}

fn perturb(h: &[f64], sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v: Vec<f64> = h.iter().map(|&x| x + sigma * rng.sample::<f64, _>(StandardNormal)).collect();
    normalize_in_place(&mut v);
    v
}

impl EngineState {
    /// Fresh state over `registry` with a randomly initialized projector.
    pub fn new(d: usize, registry: CategoryRegistry, config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let mut init = stream(config.seed, Stream::Init);
        Ok(EngineState {
            projector: Projector::random(d, config.proj_dim, &mut init)?,
            support: SupportSet::new(d, config.support_per_category),
            replay: ReplayBuffer::new(config.replay_per_category),
            registry,
            stage: None,
            batching: stream(config.seed, Stream::Batching),
            perturbation: stream(config.seed, Stream::Perturbation),
            selection: stream(config.seed, Stream::Selection),
        })
    }

    fn classifier_support(&self) -> ClassifierSupport {
        ClassifierSupport::from_support(&self.support, |c| self.registry.resolve(c))
    }

    /// Support set in projection space with labels resolved through links.
    pub fn projected_support(&self) -> Result<SupportSet> {
        let entries: Vec<(Vec<f32>, CategoryId)> = self
            .support
            .entries()
            .iter()
            .map(|e| {
                let z = self.projector.project(&to_f64(&e.embedding));
                (z.into_iter().map(|x| x as f32).collect(), self.registry.resolve(e.label))
            })
            .collect();
        SupportSet::from_entries(self.projector.out_dim(), entries.len().max(1), entries)
    }

    /// SNN predictions (resolved ids) for `rows`.
    pub fn predict<R: RowSource>(&self, rows: &[usize], embeddings: &R, config: &RunConfig) -> Result<Vec<CategoryId>> {
        if self.support.is_empty() {
            return Err(Error::State("support set is empty".into()));
        }
        let support = self.projected_support()?;
        let queries: Vec<Vec<f64>> = rows
            .iter()
            .map(|&i| self.projector.project(&to_f64(embeddings.row(i))))
            .collect();
        snn_classify(&queries, &support, config.tau_snn)
    }

    /// Optimizes the projector on `labeled` and `unlabeled` raw embeddings.
    pub fn fine_tune(
        &mut self,
        labeled: &[(Vec<f64>, CategoryId)],
        unlabeled: &[Vec<f64>],
        epochs: usize,
        config: &RunConfig,
    ) -> Result<TrainLog> {
        let half_l = config.labeled_half();
        let half_u = config.batch_size - half_l;
        let per_epoch = labeled.len().div_ceil(half_l.max(1)).max(unlabeled.len().div_ceil(half_u.max(1)));
        let total = epochs * per_epoch;
        let mut log = TrainLog::default();
        if total == 0 {
            return Ok(log);
        }
        let mut sgd = Sgd::new(
            config.lr,
            config.momentum,
            config.weight_decay,
            Schedule::Cosine { total_steps: total },
        )?;
        let support = self.classifier_support();
        let labels: Vec<(Vec<f64>, CategoryId)> =
            labeled.iter().map(|(h, c)| (h.clone(), self.registry.resolve(*c))).collect();
        let (mut sl, mut su) = (Sampler::new(labels.len()), Sampler::new(unlabeled.len()));
        for _ in 0..total {
            let (li, lr) = sl.draw(half_l, &mut self.batching);
            let (ui, ur) = su.draw(half_u, &mut self.batching);
            log.labeled_resampled |= lr;
            log.unlabeled_resampled |= ur;
            let mut batch = Batch::default();
            for &i in &li {
                batch.labeled_a.push(perturb(&labels[i].0, config.aug_sigma, &mut self.perturbation));
                batch.labeled_b.push(perturb(&labels[i].0, config.aug_sigma, &mut self.perturbation));
                batch.labels.push(labels[i].1);
            }
            for &i in &ui {
                batch.unlabeled_a.push(perturb(&unlabeled[i], config.aug_sigma, &mut self.perturbation));
                batch.unlabeled_b.push(perturb(&unlabeled[i], config.aug_sigma, &mut self.perturbation));
            }
            match total_loss(&batch, &support, &self.projector, config) {
                Ok(out) => {
                    sgd.step(self.projector.weights_mut(), &out.grad)?;
                    log.final_loss = Some(out.total);
                    log.steps += 1;
                }
                Err(Error::DegenerateBatch(_)) => log.skipped_steps += 1,
                Err(e) => return Err(e),
            }
        }
        Ok(log)
    }

    /// Adds replay exemplars for each labeled category, up to its free room,
    /// chosen in the raw embedding space.
    fn replay_labeled<R: RowSource>(&mut self, stage: &StageDataset, embeddings: &R, config: &RunConfig) -> Result<()> {
        let mut groups: BTreeMap<CategoryId, Vec<usize>> = BTreeMap::new();
        for &(i, c) in &stage.labeled {
            groups.entry(c).or_default().push(i);
        }
        for (c, rows) in groups {
            let room = self.replay.room(c, &self.registry);
            if room == 0 {
                continue;
            }
            let pts: Vec<Vec<f64>> = rows.iter().map(|&i| to_f64(embeddings.row(i))).collect();
            let picked = select_from_category(&pts, room, config.replay_select.into(), config.k_density, &mut self.selection)?;
            for j in picked {
                let entry = ReplayEntry {
                    embedding: embeddings.row(rows[j]).to_vec(),
                    category: c,
                    stage: stage.stage,
                };
                self.replay.push(entry, &self.registry);
            }
        }
        Ok(())
    }

    /// Replaces support entries of every labeled category of `stage` with a
    /// fresh selection from its labeled rows.
    fn refresh_support<R: RowSource>(&mut self, stage: &StageDataset, embeddings: &R, config: &RunConfig) -> Result<()> {
        if stage.labeled.is_empty() {
            return Ok(());
        }
        let fresh = select_support_labeled(stage, embeddings, config, &self.registry, &mut self.selection)?;
        let cats: BTreeSet<CategoryId> = stage.labeled_categories();
        let kept = self.support.without(|e| cats.contains(&self.registry.resolve(e.label)));
        self.support = kept.with(
            fresh
                .entries()
                .iter()
                .map(|e| (e.embedding.clone(), e.label))
                .collect(),
        )?;
        Ok(())
    }

    /// Supervised training on the initial labeled stage, then support and
    /// replay selection.
    pub fn train_initial<R: RowSource>(&mut self, stage0: &StageDataset, embeddings: &R, config: &RunConfig) -> Result<TrainLog> {
        if self.stage.is_some() {
            return Err(Error::State("initial training has already run".into()));
        }
        if stage0.labeled.is_empty() {
            return Err(Error::Config("initial stage has no labeled data".into()));
        }
        stage0.validate(&self.registry)?;
        self.refresh_support(stage0, embeddings, config)?;
        let labeled: Vec<(Vec<f64>, CategoryId)> =
            stage0.labeled.iter().map(|&(i, c)| (to_f64(embeddings.row(i)), c)).collect();
        let log = self.fine_tune(&labeled, &[], config.epochs_initial, config)?;
        self.replay_labeled(stage0, embeddings, config)?;
        self.stage = Some(stage0.stage);
        Ok(log)
    }

    /// Density peaks of the unlabeled rows in the input embedding space.
    /// A kept peak is known when some support entry is at least as similar
    /// to it as its `n/|P|`-th nearest unlabeled row (its expected share of
    /// the pool, never below `K^d`). Each remaining peak becomes a fresh
    /// category together with its nearest neighbors.
    pub fn discover<R: RowSource>(&mut self, stage: &StageDataset, embeddings: &R, config: &RunConfig) -> Result<Discovery> {
        let rows = &stage.unlabeled;
        let n = rows.len();
        if n <= config.k_density {
            return Ok(Discovery::default());
        }
        let z: Vec<Vec<f64>> = rows
            .iter()
            .map(|&i| {
                let mut v = to_f64(embeddings.row(i));
                normalize_in_place(&mut v);
                v
            })
            .collect();
        let m = EmbeddingMatrix::from_f64_rows(&z)?;
        let k_iou = config.k_iou.min(n - 1);
        let wide = build_knn_graph(&m, config.k_density.max(k_iou))?;
        let g_density = wide.truncated(config.k_density)?;
        let g_iou = wide.truncated(k_iou)?;
        let peaks = find_density_peaks(&g_density, &compute_density(&g_density))?;
        let kept = dedup_peaks(&peaks, &g_iou, config.iou_threshold)?;

        let zs: Vec<Vec<f64>> = self.support.entries().iter().map(|e| to_f64(&e.embedding)).collect();
        let share = (n / kept.len().max(1)).clamp(k_iou.max(1), n - 1);
        let is_known = |p: usize| {
            let mut sims: Vec<f64> = (0..n).filter(|&j| j != p).map(|j| dot(&z[j], &z[p])).collect();
            let (_, reach, _) = sims.select_nth_unstable_by(share - 1, |a, b| b.total_cmp(a));
            let reach = *reach;
            zs.iter().any(|s| dot(s, &z[p]) >= reach)
        };
        let known_set: BTreeSet<usize> = kept.indices().into_iter().filter(|&p| is_known(p)).collect();
        let novel = kept.filtered(|p| !known_set.contains(&p));
        let known: Vec<usize> = known_set.iter().map(|&p| rows[p]).collect();
        let m_neighbors = config.support_per_category.saturating_sub(1).min(g_density.k());
        let before = self.registry.next_id();
        let labeled = pseudo_label_peaks(&novel, &g_density, m_neighbors, &mut self.registry, stage.stage)?;
        let new_categories: Vec<CategoryId> = (before..self.registry.next_id()).map(CategoryId).collect();
        Ok(Discovery {
            kept: kept.indices().into_iter().map(|p| rows[p]).collect(),
            known,
            peaks: novel.indices().into_iter().map(|p| rows[p]).zip(new_categories.iter().copied()).collect(),
            labeled: labeled.into_iter().map(|(p, c)| (rows[p], c)).collect(),
            new_categories,
        })
    }

    /// One incremental stage: fine-tune on labeled data plus replay and the
    /// unlabeled rows, discover novel categories, extend support and replay,
    /// and report on the evaluation split.
    pub fn run_stage<R: RowSource>(
        &mut self,
        stage: &StageDataset,
        embeddings: &R,
        config: &RunConfig,
        mode: Mode,
        history: &mut CategoryHistory,
    ) -> Result<StageReport> {
        let t = stage.stage;
        if self.stage.map(|s| s + 1) != Some(t) {
            return Err(Error::State(format!(
                "stage {t} cannot follow {}",
                self.stage.map_or("no stage".to_string(), |s| format!("stage {s}"))
            )));
        }
        let mut flags = Vec::new();
        let mut effective = stage.clone();
        if mode == Mode::IgcdU && !stage.labeled.is_empty() {
            effective.labeled.clear();
            flags.push("labeled_ignored".to_string());
        }
        effective.validate(&self.registry)?;
        self.refresh_support(&effective, embeddings, config)?;

        let mut labeled: Vec<(Vec<f64>, CategoryId)> =
            effective.labeled.iter().map(|&(i, c)| (to_f64(embeddings.row(i)), c)).collect();
        labeled.extend(self.replay.entries().iter().map(|e| (to_f64(&e.embedding), e.category)));
        let unlabeled: Vec<Vec<f64>> = effective.unlabeled.iter().map(|&i| to_f64(embeddings.row(i))).collect();
        let log = self.fine_tune(&labeled, &unlabeled, config.epochs_stage, config)?;
        flags.extend(log.flags());

        if effective.unlabeled.len() <= config.k_density {
            flags.push("discovery_skipped".to_string());
        }
        let found = self.discover(&effective, embeddings, config)?;
        self.support = crate::snn::extend_support(&self.support, &found.labeled, embeddings, &self.registry)?;
        for &(row, c) in &found.peaks {
            let entry = ReplayEntry {
                embedding: embeddings.row(row).to_vec(),
                category: c,
                stage: t,
            };
            self.replay.push(entry, &self.registry);
        }
        self.replay_labeled(&effective, embeddings, config)?;
        self.stage = Some(t);

        history.record(effective.labeled_categories(), effective.unlabeled_categories());
        let eval_rows: Vec<usize> = effective.eval.iter().map(|&(i, _)| i).collect();
        let pred = self.predict(&eval_rows, embeddings, config)?;
        let mut report = stage_report(&pred, &effective, history, &self.registry, found.kept.len())?;
        report.novel_category_count = found.new_categories.len();
        report.flags = flags;
        Ok(report)
    }

    /// Reveals the labels of `stage`'s unlabeled rows. Categories discovered
    /// at this stage are linked to ground truth through the optimal matching
    /// of their predictions; ids left unmatched are linked to the category
    /// most of their predictions fall in, or failing that to the category of
    /// their peak. Returns the labeled rows for the next stage.
    pub fn advance_stage_igcd_l<R: RowSource>(
        &mut self,
        stage: &StageDataset,
        embeddings: &R,
        config: &RunConfig,
    ) -> Result<Vec<(usize, CategoryId)>> {
        let truth: Vec<CategoryId> = stage
            .unlabeled
            .iter()
            .map(|i| {
                stage.ground_truth.get(i).copied().ok_or_else(|| {
                    Error::State(format!("stage {}: no ground truth for row {i}", stage.stage))
                })
            })
            .collect::<Result<_>>()?;
        let fresh: Vec<CategoryId> = self
            .registry
            .iter()
            .filter(|(_, info)| info.provenance == Provenance::Discovered && info.stage == stage.stage && info.link.is_none())
            .map(|(c, _)| c)
            .collect();
        if !fresh.is_empty() && !stage.unlabeled.is_empty() {
            let pred = self.predict(&stage.unlabeled, embeddings, config)?;
            let (_, assignment) = clustering_accuracy(&pred, &truth)?;
            for d in fresh {
                let target = assignment.get(&d).copied().or_else(|| {
                    let mut votes: BTreeMap<CategoryId, usize> = BTreeMap::new();
                    for (p, y) in pred.iter().zip(&truth) {
                        if *p == d {
                            *votes.entry(*y).or_insert(0) += 1;
                        }
                    }
                    votes.into_iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0))).map(|(c, _)| c)
                });
                let target = match target {
                    Some(g) => Some(g),
                    None => self.peak_truth(d, stage, embeddings),
                };
                if let Some(g) = target {
                    self.registry.link(d, g)?;
                }
            }
        }
        Ok(stage.unlabeled.iter().copied().zip(truth).collect())
    }

    /// Ground truth of the unlabeled row nearest to `d`'s first support entry.
    fn peak_truth<R: RowSource>(&self, d: CategoryId, stage: &StageDataset, embeddings: &R) -> Option<CategoryId> {
        let e = self.support.entries().iter().find(|e| e.label == d)?;
        let q = to_f64(&e.embedding);
        stage
            .unlabeled
            .iter()
            .map(|&i| (i, dot(&q, &to_f64(embeddings.row(i)))))
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
            .and_then(|(i, _)| stage.ground_truth.get(&i).copied())
    }
}

/// Reports and summary metrics of a complete run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub reports: Vec<StageReport>,
    pub history: CategoryHistory,
    pub forgetting: f64,
    pub discovery: f64,
    pub state: EngineState,
    /// Embedding reads outside the stage being processed.
    pub audit_violations: usize,
}

/// Runs every stage of `bench` in `mode`.
pub fn run_benchmark(bench: &Benchmark, config: &RunConfig, mode: Mode) -> Result<RunOutput> {
    let first = bench
        .stages
        .first()
        .ok_or_else(|| Error::Data("benchmark has no stages".into()))?;
    let mut state = EngineState::new(bench.embeddings.d(), bench.registry.clone(), config)?;
    let mut history = CategoryHistory::new();
    let mut violations = 0;

    let view = AuditedEmbeddings::new(&bench.embeddings, first);
    let log = state.train_initial(first, &view, config)?;
    history.record(first.labeled_categories(), first.unlabeled_categories());
    let eval_rows: Vec<usize> = first.eval.iter().map(|&(i, _)| i).collect();
    let pred = state.predict(&eval_rows, &view, config)?;
    let mut report = stage_report(&pred, first, &history, &state.registry, 0)?;
    report.flags = log.flags();
    let mut reports = vec![report];
    violations += view.violations();

    let mut revealed: Vec<(usize, CategoryId)> = Vec::new();
    for stage in &bench.stages[1..] {
        let mut effective = stage.clone();
        if mode == Mode::IgcdL {
            effective.labeled = std::mem::take(&mut revealed);
        }
        let view = AuditedEmbeddings::new(&bench.embeddings, &effective);
        reports.push(state.run_stage(&effective, &view, config, mode, &mut history)?);
        if mode == Mode::IgcdL {
            revealed = state.advance_stage_igcd_l(&effective, &view, config)?;
        }
        violations += view.violations();
    }

    let last = bench.stages.last().unwrap_or(first);
    let view = AuditedEmbeddings::new(&bench.embeddings, last);
    let rows: Vec<usize> = last.eval.iter().map(|&(i, _)| i).collect();
    let truth: Vec<CategoryId> = last.eval.iter().map(|&(_, c)| c).collect();
    let discovery = final_discovery(&state.predict(&rows, &view, config)?, &truth)?;
    violations += view.violations();
    let forgetting = if reports.len() > 1 { max_forgetting(&reports)? } else { 0.0 };
    Ok(RunOutput {
        reports,
        history,
        forgetting,
        discovery,
        state,
        audit_violations: violations,
    })
}
