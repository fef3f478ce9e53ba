//! Deterministic multi-stage Gaussian-mixture benchmarks.
//!
//! Stage 0 holds labeled samples of the initial categories. Every later stage
//! holds unlabeled samples of a few recurring categories, whose centers drift
//! between appearances, plus freshly introduced ones. Each stage also carries
//! a held-out evaluation split covering every category seen so far.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::{format_list, parse_kv, parse_list, parse_value};
use crate::dataset::StageDataset;
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::registry::{CategoryId, CategoryRegistry, Provenance};
use crate::rng::{stream, Stream};

/// Shape of a synthetic benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_stages: usize,
    pub categories_initial: usize,
    /// Novel categories introduced at stages `1..n_stages`.
    pub categories_new_per_stage: Vec<usize>,
    /// Previously seen categories re-appearing unlabeled at stages `1..n_stages`.
    pub categories_old_per_stage: Vec<usize>,
    pub samples_per_category: usize,
    pub eval_per_category: usize,
    pub dim: usize,
    pub cluster_std: f64,
    /// Minimum pairwise center distance, in units of `cluster_std`.
    pub center_separation: f64,
    /// Std of the per-appearance center drift of recurring categories.
    pub drift_std: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_stages: 4,
            categories_initial: 8,
            categories_new_per_stage: vec![4, 4, 4],
            categories_old_per_stage: vec![4, 4, 4],
            samples_per_category: 100,
            eval_per_category: 20,
            dim: 32,
            cluster_std: 1.0,
            center_separation: 8.0,
            drift_std: 0.5,
            seed: 42,
        }
    }
}

impl SyntheticSpec {
    pub const KEYS: &'static [&'static str] = &[
        "n_stages",
        "categories_initial",
        "categories_new_per_stage",
        "categories_old_per_stage",
        "samples_per_category",
        "eval_per_category",
        "dim",
        "cluster_std",
        "center_separation",
        "drift_std",
        "seed",
    ];

    /// A single stage of `categories` labeled clusters.
    pub fn single_stage(categories: usize, samples_per_category: usize, dim: usize, seed: u64) -> Self {
        SyntheticSpec {
            n_stages: 1,
            categories_initial: categories,
            categories_new_per_stage: vec![],
            categories_old_per_stage: vec![],
            samples_per_category,
            dim,
            seed,
            ..Self::default()
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "n_stages" => self.n_stages = parse_value(key, value)?,
            "categories_initial" => self.categories_initial = parse_value(key, value)?,
            "categories_new_per_stage" => self.categories_new_per_stage = parse_list(key, value)?,
            "categories_old_per_stage" => self.categories_old_per_stage = parse_list(key, value)?,
            "samples_per_category" => self.samples_per_category = parse_value(key, value)?,
            "eval_per_category" => self.eval_per_category = parse_value(key, value)?,
            "dim" => self.dim = parse_value(key, value)?,
            "cluster_std" => self.cluster_std = parse_value(key, value)?,
            "center_separation" => self.center_separation = parse_value(key, value)?,
            "drift_std" => self.drift_std = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            _ => return Err(Error::Config(format!("unknown benchmark key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "n_stages" => self.n_stages.to_string(),
            "categories_initial" => self.categories_initial.to_string(),
            "categories_new_per_stage" => format_list(&self.categories_new_per_stage),
            "categories_old_per_stage" => format_list(&self.categories_old_per_stage),
            "samples_per_category" => self.samples_per_category.to_string(),
            "eval_per_category" => self.eval_per_category.to_string(),
            "dim" => self.dim.to_string(),
            "cluster_std" => self.cluster_std.to_string(),
            "center_separation" => self.center_separation.to_string(),
            "drift_std" => self.drift_std.to_string(),
            "seed" => self.seed.to_string(),
            _ => return None,
        })
    }

    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut spec = Self::default();
        for e in parse_kv(text)? {
            spec.set(&e.key, &e.value).map_err(|err| Error::Parse {
                line: e.line,
                msg: err.to_string(),
            })?;
        }
        Ok(spec)
    }

    pub fn to_kv_string(&self) -> String {
        let mut out = String::from("# igcd synthetic benchmark\n");
        for key in Self::KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).unwrap_or_default());
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_stages == 0 {
            return Err(Error::Config("n_stages must be >= 1".into()));
        }
        let later = self.n_stages - 1;
        if self.categories_new_per_stage.len() != later || self.categories_old_per_stage.len() != later {
            return Err(Error::Config(format!(
                "per-stage category lists need {later} entries (stages 1..{})",
                self.n_stages
            )));
        }
        if self.categories_initial == 0 {
            return Err(Error::Config("categories_initial must be >= 1".into()));
        }
        if self.samples_per_category == 0 {
            return Err(Error::Config("samples_per_category must be >= 1".into()));
        }
        if self.dim < 2 {
            return Err(Error::Config("dim must be >= 2".into()));
        }
        if !(self.cluster_std > 0.0) || !(self.center_separation >= 0.0) || !(self.drift_std >= 0.0) {
            return Err(Error::Config(
                "cluster_std must be positive and separation/drift non-negative".into(),
            ));
        }
        let mut seen = self.categories_initial;
        for t in 1..self.n_stages {
            let old = self.categories_old_per_stage[t - 1];
            if old > seen {
                return Err(Error::Config(format!(
                    "stage {t}: {old} recurring categories requested but only {seen} seen before"
                )));
            }
            seen += self.categories_new_per_stage[t - 1];
        }
        Ok(())
    }

    pub fn total_categories(&self) -> usize {
        self.categories_initial + self.categories_new_per_stage.iter().sum::<usize>()
    }
}

/// Output of [`generate_benchmark`].
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub embeddings: EmbeddingMatrix,
    pub stages: Vec<StageDataset>,
    pub registry: CategoryRegistry,
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize, std: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * std)
        .collect()
}

/// Places `k` centers with pairwise distance at least `min_dist`.
fn place_centers(rng: &mut ChaCha8Rng, k: usize, dim: usize, min_dist: f64) -> Vec<Vec<f64>> {
    // Random points on a sphere of radius r sit about r·√2 apart.
    let mut radius = 1.2 * min_dist / std::f64::consts::SQRT_2;
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut failures = 0;
    while centers.len() < k {
        let mut c = gaussian_vec(rng, dim, 1.0);
        let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        c.iter_mut().for_each(|x| *x *= radius / norm);
        let ok = centers.iter().all(|o| {
            o.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() >= min_dist
        });
        if ok {
            centers.push(c);
            failures = 0;
        } else {
            failures += 1;
            if failures > 200 {
                radius *= 1.05;
                for o in centers.iter_mut() {
                    o.iter_mut().for_each(|x| *x *= 1.05);
                }
                failures = 0;
            }
        }
    }
    centers
}

/// Generates the benchmark described by `spec`. Fully determined by the seed.
pub fn generate_benchmark(spec: &SyntheticSpec) -> Result<Benchmark> {
    spec.validate()?;
    let mut rng = stream(spec.seed, Stream::Generation);
    let total = spec.total_categories();
    let mut centers = place_centers(&mut rng, total, spec.dim, spec.center_separation * spec.cluster_std);

    let mut registry = CategoryRegistry::new();
    let mut rows: Vec<f64> = Vec::new();
    let mut n_rows = 0usize;
    let mut push_sample = |center: &[f64], rng: &mut ChaCha8Rng, rows: &mut Vec<f64>| {
        let mut x: Vec<f64> = center
            .iter()
            .map(|&c| c + rng.sample::<f64, _>(StandardNormal) * spec.cluster_std)
            .collect();
        crate::embedding::normalize_in_place(&mut x);
        rows.extend(x);
        n_rows += 1;
        n_rows - 1
    };

    let mut seen: Vec<CategoryId> = Vec::new();
    let mut stages = Vec::with_capacity(spec.n_stages);
    for t in 0..spec.n_stages {
        let mut stage = StageDataset {
            stage: t,
            ..StageDataset::default()
        };
        let present: Vec<CategoryId> = if t == 0 {
            let ids = registry.register(spec.categories_initial, Provenance::Labeled, 0);
            seen.extend(&ids);
            ids
        } else {
            let n_old = spec.categories_old_per_stage[t - 1];
            let picks = index::sample(&mut rng, seen.len(), n_old).into_vec();
            let mut old: Vec<CategoryId> = picks.into_iter().map(|i| seen[i]).collect();
            old.sort();
            for c in &old {
                let drift = gaussian_vec(&mut rng, spec.dim, spec.drift_std);
                centers[c.index()].iter_mut().zip(drift).for_each(|(x, dx)| *x += dx);
            }
            let new = registry.register(spec.categories_new_per_stage[t - 1], Provenance::Labeled, t);
            seen.extend(&new);
            old.into_iter().chain(new).collect()
        };

        for &c in &present {
            for _ in 0..spec.samples_per_category {
                let row = push_sample(&centers[c.index()], &mut rng, &mut rows);
                if t == 0 {
                    stage.labeled.push((row, c));
                } else {
                    stage.unlabeled.push(row);
                    stage.ground_truth.insert(row, c);
                }
            }
        }
        let mut eval_cats = seen.clone();
        eval_cats.sort();
        for &c in &eval_cats {
            for _ in 0..spec.eval_per_category {
                let row = push_sample(&centers[c.index()], &mut rng, &mut rows);
                stage.eval.push((row, c));
            }
        }
        stages.push(stage);
    }

    let embeddings = EmbeddingMatrix::new(
        rows.len() / spec.dim,
        spec.dim,
        rows.into_iter().map(|v| v as f32).collect(),
    )?;
    Ok(Benchmark {
        embeddings,
        stages,
        registry,
    })
}

/// Category sets of each stage, as written to a benchmark manifest.
pub fn stage_category_counts(bench: &Benchmark) -> Vec<BTreeMap<&'static str, usize>> {
    bench
        .stages
        .iter()
        .map(|s| {
            let mut m = BTreeMap::new();
            m.insert("labeled", s.labeled.len());
            m.insert("unlabeled", s.unlabeled.len());
            m.insert("eval", s.eval.len());
            m.insert("categories_labeled", s.labeled_categories().len());
            m.insert("categories_unlabeled", s.unlabeled_categories().len());
            m
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neighbors::build_knn_graph;

    #[test]
    fn single_stage_counts() {
        let spec = SyntheticSpec {
            eval_per_category: 0,
            ..SyntheticSpec::single_stage(2, 10, 4, 7)
        };
        let b = generate_benchmark(&spec).unwrap();
        assert_eq!(b.embeddings.n(), 20);
        assert_eq!(b.stages.len(), 1);
        assert_eq!(b.stages[0].labeled.len(), 20);
        assert!(b.stages[0].unlabeled.is_empty());
        assert_eq!(b.registry.len(), 2);
    }

    #[test]
    fn rows_are_unit_norm() {
        let b = generate_benchmark(&SyntheticSpec::single_stage(3, 5, 6, 1)).unwrap();
        for row in b.embeddings.rows() {
            let n: f64 = row.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn no_novel_categories_means_only_seen_ids() {
        let spec = SyntheticSpec {
            categories_new_per_stage: vec![0, 0, 0],
            ..SyntheticSpec::default()
        };
        let b = generate_benchmark(&spec).unwrap();
        let initial = b.stages[0].labeled_categories();
        for s in &b.stages[1..] {
            assert!(s.unlabeled_categories().is_subset(&initial));
        }
    }

    #[test]
    fn overlap_violation_names_the_stage() {
        let spec = SyntheticSpec {
            categories_initial: 2,
            categories_new_per_stage: vec![0, 0, 0],
            categories_old_per_stage: vec![2, 3, 2],
            ..SyntheticSpec::default()
        };
        let err = generate_benchmark(&spec).unwrap_err();
        assert!(err.to_string().contains("stage 2"), "{err}");
    }

    #[test]
    fn stages_validate_against_registry() {
        let b = generate_benchmark(&SyntheticSpec::default()).unwrap();
        for s in &b.stages {
            s.validate(&b.registry).unwrap();
        }
        // Stage t's evaluation split covers every category seen so far.
        let seen: usize = 8 + 4 * 3;
        let last = b.stages.last().unwrap();
        let eval_cats: std::collections::BTreeSet<_> = last.eval.iter().map(|&(_, c)| c).collect();
        assert_eq!(eval_cats.len(), seen);
    }

    #[test]
    fn origin_stages_are_recorded() {
        let b = generate_benchmark(&SyntheticSpec::default()).unwrap();
        let origins: Vec<usize> = b.registry.iter().map(|(_, info)| info.stage).collect();
        assert_eq!(&origins[..8], &[0; 8]);
        assert_eq!(&origins[8..12], &[1; 4]);
        assert_eq!(&origins[16..20], &[3; 4]);
    }

    #[test]
    fn well_separated_clusters_are_neighbor_pure() {
        let spec = SyntheticSpec {
            eval_per_category: 0,
            ..SyntheticSpec::single_stage(20, 100, 32, 3)
        };
        let b = generate_benchmark(&spec).unwrap();
        let labels: Vec<CategoryId> = b.stages[0].labeled.iter().map(|&(_, c)| c).collect();
        let g = build_knn_graph(&b.embeddings, 10).unwrap();
        let mut same = 0usize;
        for i in 0..b.embeddings.n() {
            same += g.neighbors(i).iter().filter(|&&j| labels[j as usize] == labels[i]).count();
        }
        let purity = same as f64 / (b.embeddings.n() * 10) as f64;
        assert!(purity > 0.99, "purity {purity}");
    }

    #[test]
    fn kv_round_trip() {
        let spec = SyntheticSpec::default();
        assert_eq!(SyntheticSpec::from_kv_str(&spec.to_kv_string()).unwrap(), spec);
    }
}
