//! Clustering accuracy, per-group stage reports and the summary metrics.

mod hungarian;

pub use hungarian::max_weight_assignment;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::config::Mode;
use crate::dataset::StageDataset;
use crate::error::{Error, Result};
use crate::registry::{CategoryId, CategoryRegistry};

/// Accuracy of `pred` against `truth` under the best injective mapping of
/// predicted clusters to truth categories. Returns the mapping too.
pub fn clustering_accuracy<P: Ord + Copy, T: Ord + Copy>(pred: &[P], truth: &[T]) -> Result<(f64, BTreeMap<P, T>)> {
    if pred.len() != truth.len() {
        return Err(Error::Argument(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Argument("clustering accuracy of an empty set".into()));
    }
    let clusters: Vec<P> = pred.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let classes: Vec<T> = truth.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let mut confusion = vec![vec![0i64; classes.len()]; clusters.len()];
    for (p, t) in pred.iter().zip(truth) {
        let r = clusters.binary_search(p).unwrap_or_else(|_| unreachable!());
        let c = classes.binary_search(t).unwrap_or_else(|_| unreachable!());
        confusion[r][c] += 1;
    }
    let assignment = max_weight_assignment(&confusion);
    let mut map = BTreeMap::new();
    let mut hits = 0;
    for (r, c) in assignment.iter().enumerate() {
        if let Some(c) = *c {
            hits += confusion[r][c];
            map.insert(clusters[r], classes[c]);
        }
    }
    Ok((hits as f64 / pred.len() as f64, map))
}

/// Category sets seen at each stage so far: `(C_lab^t, C_unlab^t)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CategoryHistory {
    stages: Vec<(BTreeSet<CategoryId>, BTreeSet<CategoryId>)>,
}

impl CategoryHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, labeled: BTreeSet<CategoryId>, unlabeled: BTreeSet<CategoryId>) {
        self.stages.push((labeled, unlabeled));
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn labeled(&self, t: usize) -> Option<&BTreeSet<CategoryId>> {
        self.stages.get(t).map(|s| &s.0)
    }

    pub fn unlabeled(&self, t: usize) -> Option<&BTreeSet<CategoryId>> {
        self.stages.get(t).map(|s| &s.1)
    }

    /// First stage in which `c` appeared in either set.
    pub fn origin(&self, c: CategoryId) -> Option<usize> {
        self.stages.iter().position(|(l, u)| l.contains(&c) || u.contains(&c))
    }
}

/// Evaluation of one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    pub stage: usize,
    pub acc_all: Option<f64>,
    pub acc_old: Option<f64>,
    pub acc_new: Option<f64>,
    /// Earlier stage index → accuracy on its categories absent from this stage.
    pub acc_s: BTreeMap<usize, f64>,
    /// Accuracy on categories that first appeared at stage 0.
    pub acc_initial: Option<f64>,
    pub estimated_category_count: usize,
    /// Fresh category ids issued at this stage.
    pub novel_category_count: usize,
    /// Predicted id → ground-truth id.
    pub assignment: BTreeMap<CategoryId, CategoryId>,
    pub flags: Vec<String>,
}

#[derive(Default)]
struct Tally {
    hit: usize,
    total: usize,
}

impl Tally {
    fn add(&mut self, hit: bool) {
        self.total += 1;
        self.hit += hit as usize;
    }

    fn rate(&self) -> Option<f64> {
        (self.total > 0).then(|| self.hit as f64 / self.total as f64)
    }
}

/// Builds the report for `stage` from predictions on its evaluation split.
/// `history` must already hold this stage's category sets. Predicted ids are
/// resolved through registry links before matching.
pub fn stage_report(
    predictions: &[CategoryId],
    stage: &StageDataset,
    history: &CategoryHistory,
    registry: &CategoryRegistry,
    estimated_category_count: usize,
) -> Result<StageReport> {
    let t = stage.stage;
    let (lab, unlab) = match (history.labeled(t), history.unlabeled(t)) {
        (Some(l), Some(u)) => (l, u),
        _ => return Err(Error::State(format!("no category history for stage {t}"))),
    };
    let pred: Vec<CategoryId> = predictions.iter().map(|&p| registry.resolve(p)).collect();
    let truth: Vec<CategoryId> = stage.eval.iter().map(|&(_, c)| c).collect();
    let (_, assignment) = clustering_accuracy(&pred, &truth)?;

    let (mut all, mut old, mut new, mut initial) = (Tally::default(), Tally::default(), Tally::default(), Tally::default());
    let mut absent: BTreeMap<usize, Tally> = BTreeMap::new();
    for (p, y) in pred.iter().zip(&truth) {
        let hit = assignment.get(p) == Some(y);
        let origin = history.origin(*y);
        if lab.contains(y) || unlab.contains(y) {
            all.add(hit);
        } else if let Some(o) = origin.filter(|&o| o < t) {
            absent.entry(o).or_default().add(hit);
        }
        if lab.contains(y) {
            old.add(hit);
        } else if unlab.contains(y) {
            new.add(hit);
        }
        if origin == Some(0) {
            initial.add(hit);
        }
    }
    Ok(StageReport {
        stage: t,
        acc_all: all.rate(),
        acc_old: old.rate(),
        acc_new: new.rate(),
        acc_s: absent.into_iter().filter_map(|(o, tally)| tally.rate().map(|r| (o, r))).collect(),
        acc_initial: initial.rate(),
        estimated_category_count,
        novel_category_count: 0,
        assignment,
        flags: Vec::new(),
    })
}

/// Largest drop of stage-0 category accuracy relative to stage 0.
pub fn max_forgetting(reports: &[StageReport]) -> Result<f64> {
    if reports.len() < 2 {
        return Err(Error::Argument("forgetting needs at least two stage reports".into()));
    }
    let base = reports[0]
        .acc_initial
        .ok_or_else(|| Error::State("stage 0 report has no initial-category accuracy".into()))?;
    Ok(reports[1..]
        .iter()
        .filter_map(|r| r.acc_initial)
        .map(|a| base - a)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Final accuracy over an evaluation split covering every category seen.
pub fn final_discovery(predictions: &[CategoryId], truth: &[CategoryId]) -> Result<f64> {
    clustering_accuracy(predictions, truth).map(|(acc, _)| acc)
}

fn push_opt(out: &mut String, key: &str, value: Option<f64>) {
    if let Some(v) = value {
        let _ = writeln!(out, "{key}={v}");
    }
}

impl StageReport {
    /// One `key=value` per line; absent groups are omitted.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "stage={}", self.stage);
        push_opt(&mut out, "acc_all", self.acc_all);
        push_opt(&mut out, "acc_old", self.acc_old);
        push_opt(&mut out, "acc_new", self.acc_new);
        for (s, v) in &self.acc_s {
            let _ = writeln!(out, "acc_s.{s}={v}");
        }
        push_opt(&mut out, "acc_initial", self.acc_initial);
        let _ = writeln!(out, "estimated_category_count={}", self.estimated_category_count);
        let _ = writeln!(out, "novel_category_count={}", self.novel_category_count);
        let pairs: Vec<String> = self.assignment.iter().map(|(p, t)| format!("{p}:{t}")).collect();
        let _ = writeln!(out, "assignment={}", pairs.join(","));
        let _ = writeln!(out, "flags={}", self.flags.join(","));
        out
    }
}

/// Joins reports with `---` separator lines.
pub fn reports_to_text(reports: &[StageReport]) -> String {
    reports.iter().map(StageReport::to_text).collect::<Vec<_>>().join("---\n")
}

fn parse_f64(line: usize, v: &str) -> Result<f64> {
    let x: f64 = v.parse().map_err(|_| Error::Parse { line, msg: format!("bad number {v:?}") })?;
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Parse { line, msg: format!("accuracy {x} outside [0, 1]") });
    }
    Ok(x)
}

fn parse_usize(line: usize, v: &str) -> Result<usize> {
    v.parse().map_err(|_| Error::Parse { line, msg: format!("bad integer {v:?}") })
}

fn parse_id(line: usize, v: &str) -> Result<CategoryId> {
    v.parse().map(CategoryId).map_err(|_| Error::Parse { line, msg: format!("bad category id {v:?}") })
}

/// Inverse of [`reports_to_text`].
pub fn parse_reports(text: &str) -> Result<Vec<StageReport>> {
    let mut reports = Vec::new();
    let mut current: Option<StageReport> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.trim();
        if raw.is_empty() {
            continue;
        }
        if raw == "---" {
            reports.extend(current.take());
            continue;
        }
        let (key, value) = raw
            .split_once('=')
            .ok_or_else(|| Error::Parse { line, msg: format!("expected key=value, got {raw:?}") })?;
        if key == "stage" {
            reports.extend(current.take());
            current = Some(StageReport {
                stage: parse_usize(line, value)?,
                acc_all: None,
                acc_old: None,
                acc_new: None,
                acc_s: BTreeMap::new(),
                acc_initial: None,
                estimated_category_count: 0,
                novel_category_count: 0,
                assignment: BTreeMap::new(),
                flags: Vec::new(),
            });
            continue;
        }
        let r = current
            .as_mut()
            .ok_or_else(|| Error::Parse { line, msg: "field before stage=".into() })?;
        match key {
            "acc_all" => r.acc_all = Some(parse_f64(line, value)?),
            "acc_old" => r.acc_old = Some(parse_f64(line, value)?),
            "acc_new" => r.acc_new = Some(parse_f64(line, value)?),
            "acc_initial" => r.acc_initial = Some(parse_f64(line, value)?),
            "estimated_category_count" => r.estimated_category_count = parse_usize(line, value)?,
            "novel_category_count" => r.novel_category_count = parse_usize(line, value)?,
            "assignment" => {
                for pair in value.split(',').filter(|p| !p.is_empty()) {
                    let (p, t) = pair
                        .split_once(':')
                        .ok_or_else(|| Error::Parse { line, msg: format!("bad pair {pair:?}") })?;
                    let truth = parse_id(line, t)?;
                    if r.assignment.values().any(|&x| x == truth) {
                        return Err(Error::Parse { line, msg: format!("category {truth} assigned twice") });
                    }
                    r.assignment.insert(parse_id(line, p)?, truth);
                }
            }
            "flags" => r.flags = value.split(',').filter(|f| !f.is_empty()).map(String::from).collect(),
            k => match k.strip_prefix("acc_s.") {
                Some(s) => {
                    r.acc_s.insert(parse_usize(line, s)?, parse_f64(line, value)?);
                }
                None => return Err(Error::Parse { line, msg: format!("unknown key {k:?}") }),
            },
        }
    }
    reports.extend(current);
    Ok(reports)
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{:.2}", 100.0 * x)).unwrap_or_default()
}

/// Header and one row in the results-table layout (accuracies in percent).
/// Stage 0 contributes `All`; later stages `All/Old/New/S-t` for IGCD-l
/// and `New/S-t` for IGCD-u. Absent groups become empty cells.
pub fn summary_csv(reports: &[StageReport], mode: Mode, m_f: f64, m_d: f64) -> String {
    let mut header = Vec::new();
    let mut row = Vec::new();
    for r in reports {
        let t = r.stage;
        let mut push = |name: String, v: Option<f64>| {
            header.push(format!("stage{t}/{name}"));
            row.push(cell(v));
        };
        if t == 0 {
            push("All".into(), r.acc_all);
            continue;
        }
        if mode == Mode::IgcdL {
            push("All".into(), r.acc_all);
            push("Old".into(), r.acc_old);
        }
        push("New".into(), r.acc_new);
        for (s, v) in r.acc_s.iter().rev() {
            push(format!("S-{s}"), Some(*v));
        }
    }
    header.extend(["M_f".to_string(), "M_d".to_string()]);
    row.extend([cell(Some(m_f)), cell(Some(m_d))]);
    format!("{}\n{}\n", header.join(","), row.join(","))
}

/// One row per swept value with its `M_f` and `M_d` (percent).
pub fn ablation_csv(parameter: &str, rows: &[(String, f64, f64)]) -> String {
    let mut out = format!("{parameter},M_f,M_d\n");
    for (value, m_f, m_d) in rows {
        let _ = writeln!(out, "{value},{},{}", cell(Some(*m_f)), cell(Some(*m_d)));
    }
    out
}
