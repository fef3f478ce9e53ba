//! On-disk benchmark layout: one binary embedding file per stage plus a
//! plain-text manifest.
//!
//! Each stage file stores its rows in the order labeled, unlabeled, eval,
//! with the ground-truth category of every row in the label column. The
//! manifest records the row counts that delimit those blocks.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::config::{format_list, parse_kv, parse_list, parse_value};
use crate::dataset::StageDataset;
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::registry::{CategoryRegistry, Provenance};

use super::format::{read_embeddings_binary, write_embeddings_binary};
use super::synthetic::Benchmark;

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageEntry {
    pub stage: usize,
    pub file: String,
    pub labeled: usize,
    pub unlabeled: usize,
    pub eval: usize,
    pub categories_labeled: Vec<u32>,
    pub categories_unlabeled: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub dim: usize,
    /// Origin stage of each category id.
    pub category_origin: Vec<usize>,
    pub stages: Vec<StageEntry>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut out = String::from("# igcd benchmark manifest\n");
        let _ = writeln!(out, "version = 1");
        let _ = writeln!(out, "dim = {}", self.dim);
        let _ = writeln!(out, "stages = {}", self.stages.len());
        let _ = writeln!(out, "categories = {}", self.category_origin.len());
        let _ = writeln!(out, "category_origin = {}", format_list(&self.category_origin));
        for s in &self.stages {
            out.push_str("---\n");
            let _ = writeln!(out, "stage = {}", s.stage);
            let _ = writeln!(out, "file = {}", s.file);
            let _ = writeln!(out, "labeled = {}", s.labeled);
            let _ = writeln!(out, "unlabeled = {}", s.unlabeled);
            let _ = writeln!(out, "eval = {}", s.eval);
            let _ = writeln!(out, "categories_labeled = {}", format_list(&s.categories_labeled));
            let _ = writeln!(out, "categories_unlabeled = {}", format_list(&s.categories_unlabeled));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut blocks: Vec<String> = vec![String::new()];
        for line in text.lines() {
            if line.trim() == "---" {
                blocks.push(String::new());
            } else {
                blocks.last_mut().unwrap().push_str(line);
                blocks.last_mut().unwrap().push('\n');
            }
        }
        let header = parse_kv(&blocks[0])?;
        let find = |entries: &[crate::config::KvEntry], key: &str| -> Result<String> {
            entries
                .iter()
                .find(|e| e.key == key)
                .map(|e| e.value.clone())
                .ok_or_else(|| Error::Data(format!("manifest is missing `{key}`")))
        };
        let version: u32 = parse_value("version", &find(&header, "version")?)?;
        if version != 1 {
            return Err(Error::Data(format!("unsupported manifest version {version}")));
        }
        let dim = parse_value("dim", &find(&header, "dim")?)?;
        let n_stages: usize = parse_value("stages", &find(&header, "stages")?)?;
        let category_origin: Vec<usize> = parse_list("category_origin", &find(&header, "category_origin")?)?;
        let mut stages = Vec::new();
        for block in &blocks[1..] {
            let e = parse_kv(block)?;
            stages.push(StageEntry {
                stage: parse_value("stage", &find(&e, "stage")?)?,
                file: find(&e, "file")?,
                labeled: parse_value("labeled", &find(&e, "labeled")?)?,
                unlabeled: parse_value("unlabeled", &find(&e, "unlabeled")?)?,
                eval: parse_value("eval", &find(&e, "eval")?)?,
                categories_labeled: parse_list("categories_labeled", &find(&e, "categories_labeled")?)?,
                categories_unlabeled: parse_list("categories_unlabeled", &find(&e, "categories_unlabeled")?)?,
            });
        }
        if stages.len() != n_stages {
            return Err(Error::Data(format!(
                "manifest declares {n_stages} stages but lists {}",
                stages.len()
            )));
        }
        Ok(Manifest {
            dim,
            category_origin,
            stages,
        })
    }
}

/// Writes stage files and the manifest into `dir` (created if missing).
pub fn write_benchmark(bench: &Benchmark, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    for s in &bench.stages {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for &(i, c) in &s.labeled {
            rows.push(i);
            labels.push(c);
        }
        for &i in &s.unlabeled {
            rows.push(i);
            labels.push(s.ground_truth[&i]);
        }
        for &(i, c) in &s.eval {
            rows.push(i);
            labels.push(c);
        }
        let file = format!("stage_{}.igcd", s.stage);
        let m = bench.embeddings.select_rows(&rows)?;
        write_embeddings_binary(&dir.join(&file), &m, Some(&labels))?;
        entries.push(StageEntry {
            stage: s.stage,
            file,
            labeled: s.labeled.len(),
            unlabeled: s.unlabeled.len(),
            eval: s.eval.len(),
            categories_labeled: s.labeled_categories().iter().map(|c| c.0).collect(),
            categories_unlabeled: s.unlabeled_categories().iter().map(|c| c.0).collect(),
        });
    }
    let manifest = Manifest {
        dim: bench.embeddings.d(),
        category_origin: bench.registry.iter().map(|(_, info)| info.stage).collect(),
        stages: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_text()).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Loads a benchmark directory written by [`write_benchmark`].
pub fn read_benchmark(dir: &Path) -> Result<Benchmark> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest = Manifest::parse(&text)?;

    let mut registry = CategoryRegistry::new();
    for &origin in &manifest.category_origin {
        registry.register(1, Provenance::Labeled, origin);
    }

    let mut all: Vec<f32> = Vec::new();
    let mut offset = 0usize;
    let mut stages = Vec::new();
    for entry in &manifest.stages {
        let (m, labels) = read_embeddings_binary(&dir.join(&entry.file))?;
        let labels = labels.ok_or_else(|| Error::Data(format!("{} has no label column", entry.file)))?;
        if m.d() != manifest.dim {
            return Err(Error::Data(format!(
                "{}: dimension {} does not match manifest dim {}",
                entry.file,
                m.d(),
                manifest.dim
            )));
        }
        if m.n() != entry.labeled + entry.unlabeled + entry.eval {
            return Err(Error::Data(format!("{}: row count disagrees with manifest", entry.file)));
        }
        let mut s = StageDataset {
            stage: entry.stage,
            ..StageDataset::default()
        };
        for (local, &c) in labels.iter().enumerate() {
            if !registry.contains(c) {
                return Err(Error::Data(format!("{}: unknown category {c}", entry.file)));
            }
            let row = offset + local;
            if local < entry.labeled {
                s.labeled.push((row, c));
            } else if local < entry.labeled + entry.unlabeled {
                s.unlabeled.push(row);
                s.ground_truth.insert(row, c);
            } else {
                s.eval.push((row, c));
            }
        }
        let declared: BTreeSet<u32> = entry.categories_labeled.iter().copied().collect();
        let found: BTreeSet<u32> = s.labeled_categories().iter().map(|c| c.0).collect();
        if declared != found {
            return Err(Error::Data(format!("{}: labeled categories disagree with manifest", entry.file)));
        }
        all.extend_from_slice(m.data());
        offset += m.n();
        stages.push(s);
    }
    let embeddings = EmbeddingMatrix::new(offset, manifest.dim, all)?;
    for s in &stages {
        s.validate(&registry)?;
    }
    Ok(Benchmark {
        embeddings,
        stages,
        registry,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{generate_benchmark, SyntheticSpec};

    #[test]
    fn write_then_read_preserves_benchmark() {
        let spec = SyntheticSpec {
            samples_per_category: 6,
            eval_per_category: 2,
            ..SyntheticSpec::default()
        };
        let bench = generate_benchmark(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_benchmark(&bench, dir.path()).unwrap();
        assert_eq!(manifest.stages.len(), 4);
        let back = read_benchmark(dir.path()).unwrap();
        assert_eq!(back.registry, bench.registry);
        assert_eq!(back.stages.len(), bench.stages.len());
        for (a, b) in back.stages.iter().zip(&bench.stages) {
            assert_eq!(a.labeled.len(), b.labeled.len());
            assert_eq!(a.unlabeled_categories(), b.unlabeled_categories());
            let rows_a: Vec<&[f32]> = a.unlabeled.iter().map(|&i| back.embeddings.row(i)).collect();
            let rows_b: Vec<&[f32]> = b.unlabeled.iter().map(|&i| bench.embeddings.row(i)).collect();
            assert_eq!(rows_a, rows_b);
        }
    }

    #[test]
    fn manifest_text_round_trips() {
        let m = Manifest {
            dim: 4,
            category_origin: vec![0, 0, 1],
            stages: vec![StageEntry {
                stage: 0,
                file: "stage_0.igcd".into(),
                labeled: 3,
                unlabeled: 0,
                eval: 1,
                categories_labeled: vec![0, 1],
                categories_unlabeled: vec![],
            }],
        };
        assert_eq!(Manifest::parse(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn missing_manifest_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = read_benchmark(dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
