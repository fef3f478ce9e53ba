//! Command-line front end: `gen`, `run`, `eval`, `estimate-k`, `ablate`.
//!
//! Exit codes: 0 success, 2 usage, 3 data, 4 internal.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{split_override, Mode, RunConfig};
use crate::dataset::AuditedEmbeddings;
use crate::discovery::detect_peaks;
use crate::engine::{load_checkpoint, run_benchmark, save_checkpoint};
use crate::error::{Error, Result};
use crate::eval::{ablation_csv, clustering_accuracy, reports_to_text, summary_csv};
use crate::ingest::{generate_benchmark, read_benchmark, read_embeddings_any, write_benchmark, SyntheticSpec};
use crate::registry::CategoryId;

pub const REPORTS_FILE: &str = "reports.txt";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.igck";
pub const CONFIG_FILE: &str = "config.txt";
pub const PEAKS_FILE: &str = "peaks.txt";
pub const ABLATION_FILE: &str = "ablation.csv";

/// Parameters `ablate` may sweep.
pub const ABLATABLE: &[&str] = &[
    "support_per_category",
    "replay_per_category",
    "k_density",
    "k_iou",
    "iou_threshold",
];

#[derive(Debug, Parser)]
#[command(name = "igcd", version, about = "Incremental generalized category discovery on embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// `key = value` file. Benchmark spec for `gen`, run configuration otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override one configuration field (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic benchmark directory.
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate over every stage of a benchmark.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bench: PathBuf,
        #[arg(long, default_value = "igcd-l", value_parser = parse_mode)]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a saved checkpoint on the evaluation splits of a benchmark.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        bench: PathBuf,
        /// Only this stage's evaluation split.
        #[arg(long)]
        stage: Option<usize>,
    },
    /// Count density peaks in an embedding file.
    EstimateK {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        embeddings: PathBuf,
        /// Directory for the peak index file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One full run per value of a parameter.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bench: PathBuf,
        #[arg(long, default_value = "igcd-l", value_parser = parse_mode)]
        mode: Mode,
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, allow_hyphen_values = true)]
        values: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    s.parse().map_err(|_| format!("unknown mode `{s}` (expected igcd-l or igcd-u)"))
}

fn run_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in &common.overrides {
        let (k, v) = split_override(o)?;
        if !RunConfig::KEYS.contains(&k) {
            return Err(unknown_key(k, SyntheticSpec::KEYS.contains(&k), "run configuration"));
        }
        cfg.set(k, v)?;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn spec_config(common: &Common) -> Result<SyntheticSpec> {
    let mut spec = match &common.config {
        Some(p) => SyntheticSpec::load(p)?,
        None => SyntheticSpec::default(),
    };
    for o in &common.overrides {
        let (k, v) = split_override(o)?;
        if !SyntheticSpec::KEYS.contains(&k) {
            return Err(unknown_key(k, RunConfig::KEYS.contains(&k), "benchmark"));
        }
        spec.set(k, v)?;
    }
    if let Some(s) = common.seed {
        spec.seed = s;
    }
    spec.validate()?;
    Ok(spec)
}

fn unknown_key(key: &str, elsewhere: bool, kind: &str) -> Error {
    if elsewhere {
        Error::Argument(format!("`{key}` is not a {kind} field for this command"))
    } else {
        Error::Argument(format!("unknown override key `{key}`"))
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Runs one parsed command and returns what it prints.
pub fn execute(cli: Cli) -> Result<String> {
    let mut out = String::new();
    match cli.command {
        Command::Gen { common, out: dir } => {
            let spec = spec_config(&common)?;
            let bench = generate_benchmark(&spec)?;
            let manifest = write_benchmark(&bench, &dir)?;
            write(&dir.join("spec.txt"), &spec.to_kv_string())?;
            for s in &manifest.stages {
                let _ = writeln!(
                    out,
                    "stage {}: {} labeled, {} unlabeled, {} eval, {} labeled categories, {} unlabeled categories",
                    s.stage,
                    s.labeled,
                    s.unlabeled,
                    s.eval,
                    s.categories_labeled.len(),
                    s.categories_unlabeled.len()
                );
            }
        }
        Command::Run {
            common,
            bench,
            mode,
            out: dir,
        } => {
            let cfg = run_config(&common)?;
            let bench = read_benchmark(&bench)?;
            let run = run_benchmark(&bench, &cfg, mode)?;
            create_dir(&dir)?;
            for r in &run.reports {
                write(&dir.join(format!("stage_{}.txt", r.stage)), &r.to_text())?;
            }
            write(&dir.join(REPORTS_FILE), &reports_to_text(&run.reports))?;
            let csv = summary_csv(&run.reports, mode, run.forgetting, run.discovery);
            write(&dir.join(SUMMARY_FILE), &csv)?;
            write(&dir.join(CONFIG_FILE), &cfg.to_kv_string())?;
            save_checkpoint(&run.state, &dir.join(CHECKPOINT_FILE))?;
            out.push_str(&csv);
            let _ = writeln!(out, "M_f = {:.4}", run.forgetting);
            let _ = writeln!(out, "M_d = {:.4}", run.discovery);
        }
        Command::Eval {
            common,
            checkpoint,
            bench,
            stage,
        } => {
            let cfg = run_config(&common)?;
            let state = load_checkpoint(&checkpoint)?;
            let bench = read_benchmark(&bench)?;
            if state.projector.in_dim() != bench.embeddings.d() {
                return Err(Error::Data("checkpoint and benchmark disagree on dimension".into()));
            }
            let stages: Vec<_> = match stage {
                Some(t) => vec![bench
                    .stages
                    .get(t)
                    .ok_or_else(|| Error::Argument(format!("benchmark has no stage {t}")))?],
                None => bench.stages.iter().collect(),
            };
            for s in stages {
                let view = AuditedEmbeddings::new(&bench.embeddings, s);
                let rows: Vec<usize> = s.eval.iter().map(|&(i, _)| i).collect();
                let truth: Vec<CategoryId> = s.eval.iter().map(|&(_, c)| c).collect();
                let (acc, _) = clustering_accuracy(&state.predict(&rows, &view, &cfg)?, &truth)?;
                let _ = writeln!(out, "stage {} acc = {:.4}", s.stage, acc);
            }
        }
        Command::EstimateK {
            common,
            embeddings,
            out: dir,
        } => {
            let cfg = run_config(&common)?;
            let (m, _) = read_embeddings_any(&embeddings)?;
            let peaks = detect_peaks(&m.normalized(), &cfg)?;
            let _ = writeln!(out, "{}", peaks.len());
            if let Some(dir) = dir {
                create_dir(&dir)?;
                let mut text = String::new();
                for i in peaks.indices() {
                    let _ = writeln!(text, "{i}");
                }
                write(&dir.join(PEAKS_FILE), &text)?;
            }
        }
        Command::Ablate {
            common,
            bench,
            mode,
            param,
            values,
            out: dir,
        } => {
            if !ABLATABLE.contains(&param.as_str()) {
                return Err(Error::Argument(format!(
                    "cannot ablate `{param}`; choose one of {}",
                    ABLATABLE.join(", ")
                )));
            }
            let values: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
            if values.is_empty() {
                return Err(Error::Argument("no values to sweep".into()));
            }
            let base = run_config(&common)?;
            let bench = read_benchmark(&bench)?;
            let mut rows = Vec::with_capacity(values.len());
            for v in values {
                let mut cfg = base.clone();
                cfg.set(&param, v)?;
                cfg.validate()?;
                let run = run_benchmark(&bench, &cfg, mode)?;
                rows.push((v.to_string(), run.forgetting, run.discovery));
            }
            let csv = ablation_csv(&param, &rows);
            if let Some(dir) = dir {
                create_dir(&dir)?;
                write(&dir.join(ABLATION_FILE), &csv)?;
            }
            out.push_str(&csv);
        }
    }
    Ok(out)
}

/// Parses `args` (program name first), runs the command, prints, and returns
/// the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
