//! Run configuration and the flat `key = value` text format shared by every
//! configuration file.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// One `key = value` line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KvEntry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<Vec<KvEntry>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::Parse {
            line,
            msg: format!("expected `key = value`, got `{content}`"),
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Parse {
                line,
                msg: "empty key".into(),
            });
        }
        out.push(KvEntry {
            line,
            key: key.to_string(),
            value: value.trim().to_string(),
        });
    }
    Ok(out)
}

/// Splits a `key=value` override as given on the command line.
pub fn split_override(s: &str) -> Result<(&str, &str)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| Error::Argument(format!("override `{s}` is not of the form key=value")))
}

pub(crate) fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

pub(crate) fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse_value(key, v.trim())).collect()
}

pub(crate) fn format_list<T: ToString>(values: &[T]) -> String {
    values.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// How support samples of labeled categories are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupportSelect {
    Density,
    Random,
}

/// How replay exemplars are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplaySelect {
    Density,
    /// Nearest to the category mean, as in iCaRL.
    Centroid,
}

impl FromStr for SupportSelect {
    type Err = ();
    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "density" => Ok(SupportSelect::Density),
            "random" => Ok(SupportSelect::Random),
            _ => Err(()),
        }
    }
}

impl FromStr for ReplaySelect {
    type Err = ();
    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "density" => Ok(ReplaySelect::Density),
            "centroid" => Ok(ReplaySelect::Centroid),
            _ => Err(()),
        }
    }
}

impl SupportSelect {
    pub fn as_str(self) -> &'static str {
        match self {
            SupportSelect::Density => "density",
            SupportSelect::Random => "random",
        }
    }
}

impl ReplaySelect {
    pub fn as_str(self) -> &'static str {
        match self {
            ReplaySelect::Density => "density",
            ReplaySelect::Centroid => "centroid",
        }
    }
}

/// Incremental setting: revealed labels between stages, or none.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    IgcdL,
    IgcdU,
}

impl FromStr for Mode {
    type Err = ();
    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "igcd-l" | "igcd_l" => Ok(Mode::IgcdL),
            "igcd-u" | "igcd_u" => Ok(Mode::IgcdU),
            _ => Err(()),
        }
    }
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::IgcdL => "igcd-l",
            Mode::IgcdU => "igcd-u",
        }
    }
}

/// Every tunable of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Neighbors used for density (`K`).
    pub k_density: usize,
    /// Neighbors used for peak IoU (`K^d`).
    pub k_iou: usize,
    /// IoU threshold `T` above which the lower-density peak is suppressed.
    pub iou_threshold: f64,
    pub tau_snn: f64,
    pub tau_u: f64,
    pub tau_c: f64,
    pub tau_sharp: f64,
    pub lambda_rep: f64,
    pub lambda_cls: f64,
    /// Weight of the mean-prediction entropy regularizer.
    pub epsilon: f64,
    pub support_per_category: usize,
    pub replay_per_category: usize,
    /// Full batch; half labeled, half unlabeled.
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs_initial: usize,
    pub epochs_stage: usize,
    /// Std of the Gaussian perturbation that produces augmented views.
    pub aug_sigma: f64,
    /// Output width of the projection head.
    pub proj_dim: usize,
    pub support_select: SupportSelect,
    pub replay_select: ReplaySelect,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            k_density: 10,
            k_iou: 20,
            iou_threshold: 0.6,
            tau_snn: 0.1,
            tau_u: 0.07,
            tau_c: 0.07,
            tau_sharp: 0.04,
            lambda_rep: 0.35,
            lambda_cls: 0.5,
            epsilon: 2.0,
            support_per_category: 5,
            replay_per_category: 3,
            batch_size: 128,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            epochs_initial: 100,
            epochs_stage: 40,
            aug_sigma: 0.05,
            proj_dim: 16,
            support_select: SupportSelect::Density,
            replay_select: ReplaySelect::Density,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub const KEYS: &'static [&'static str] = &[
        "k_density",
        "k_iou",
        "iou_threshold",
        "tau_snn",
        "tau_u",
        "tau_c",
        "tau_sharp",
        "lambda_rep",
        "lambda_cls",
        "epsilon",
        "support_per_category",
        "replay_per_category",
        "batch_size",
        "lr",
        "momentum",
        "weight_decay",
        "epochs_initial",
        "epochs_stage",
        "aug_sigma",
        "proj_dim",
        "support_select",
        "replay_select",
        "seed",
    ];

    /// Shorter training schedule for desk-scale benchmarks.
    pub fn desk() -> Self {
        RunConfig {
            epochs_initial: 20,
            epochs_stage: 10,
            ..Self::default()
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "k_density" => self.k_density = parse_value(key, value)?,
            "k_iou" => self.k_iou = parse_value(key, value)?,
            "iou_threshold" => self.iou_threshold = parse_value(key, value)?,
            "tau_snn" => self.tau_snn = parse_value(key, value)?,
            "tau_u" => self.tau_u = parse_value(key, value)?,
            "tau_c" => self.tau_c = parse_value(key, value)?,
            "tau_sharp" => self.tau_sharp = parse_value(key, value)?,
            "lambda_rep" => self.lambda_rep = parse_value(key, value)?,
            "lambda_cls" => self.lambda_cls = parse_value(key, value)?,
            "epsilon" => self.epsilon = parse_value(key, value)?,
            "support_per_category" => self.support_per_category = parse_value(key, value)?,
            "replay_per_category" => self.replay_per_category = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "momentum" => self.momentum = parse_value(key, value)?,
            "weight_decay" => self.weight_decay = parse_value(key, value)?,
            "epochs_initial" => self.epochs_initial = parse_value(key, value)?,
            "epochs_stage" => self.epochs_stage = parse_value(key, value)?,
            "aug_sigma" => self.aug_sigma = parse_value(key, value)?,
            "proj_dim" => self.proj_dim = parse_value(key, value)?,
            "support_select" => self.support_select = parse_value(key, value)?,
            "replay_select" => self.replay_select = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            _ => return Err(Error::Config(format!("unknown run configuration key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "k_density" => self.k_density.to_string(),
            "k_iou" => self.k_iou.to_string(),
            "iou_threshold" => self.iou_threshold.to_string(),
            "tau_snn" => self.tau_snn.to_string(),
            "tau_u" => self.tau_u.to_string(),
            "tau_c" => self.tau_c.to_string(),
            "tau_sharp" => self.tau_sharp.to_string(),
            "lambda_rep" => self.lambda_rep.to_string(),
            "lambda_cls" => self.lambda_cls.to_string(),
            "epsilon" => self.epsilon.to_string(),
            "support_per_category" => self.support_per_category.to_string(),
            "replay_per_category" => self.replay_per_category.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "lr" => self.lr.to_string(),
            "momentum" => self.momentum.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "epochs_initial" => self.epochs_initial.to_string(),
            "epochs_stage" => self.epochs_stage.to_string(),
            "aug_sigma" => self.aug_sigma.to_string(),
            "proj_dim" => self.proj_dim.to_string(),
            "support_select" => self.support_select.as_str().to_string(),
            "replay_select" => self.replay_select.as_str().to_string(),
            "seed" => self.seed.to_string(),
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let temps = [
            ("tau_snn", self.tau_snn),
            ("tau_u", self.tau_u),
            ("tau_c", self.tau_c),
            ("tau_sharp", self.tau_sharp),
        ];
        for (name, t) in temps {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config(format!("`{name}` must be positive, got {t}")));
            }
        }
        for (name, v) in [("lambda_rep", self.lambda_rep), ("lambda_cls", self.lambda_cls)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("`{name}` must lie in [0, 1], got {v}")));
            }
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "`iou_threshold` must lie in (0, 1], got {}",
                self.iou_threshold
            )));
        }
        if self.k_density == 0 || self.k_iou == 0 {
            return Err(Error::Config("neighbor counts must be >= 1".into()));
        }
        if self.support_per_category == 0 {
            return Err(Error::Config("`support_per_category` must be >= 1".into()));
        }
        if self.batch_size < 4 || self.batch_size % 2 != 0 {
            return Err(Error::Config("`batch_size` must be even and >= 4".into()));
        }
        if self.proj_dim < 2 {
            return Err(Error::Config("`proj_dim` must be >= 2".into()));
        }
        let nonneg = [
            ("lr", self.lr),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
            ("epsilon", self.epsilon),
            ("aug_sigma", self.aug_sigma),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("`{name}` must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for e in parse_kv(text)? {
            cfg.set(&e.key, &e.value).map_err(|err| Error::Parse {
                line: e.line,
                msg: err.to_string(),
            })?;
        }
        Ok(cfg)
    }

    pub fn to_kv_string(&self) -> String {
        let mut out = String::from("# igcd run configuration\n");
        for key in Self::KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).unwrap_or_default());
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_kv_string()).map_err(|e| Error::io(path, e))
    }

    pub fn labeled_half(&self) -> usize {
        self.batch_size / 2
    }
}
