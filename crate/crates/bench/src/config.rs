//! Experiment configuration and its flat `key = value` file format.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dric_core::data::{LabelColumn, RewardMode};
use dric_core::reward::BaseKind;
use dric_core::LogisticOptions;

use crate::error::{BenchError, Result};

/// Estimators the harness knows how to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorKind {
    /// Direct method with the ridge base model.
    Dm,
    Ips,
    Dr,
    /// Switch-DR with the weight threshold picked by estimated MSE.
    SwitchDr,
    /// Switch-DR with the weight threshold picked against ground truth.
    SwitchDrOracle,
    DmIb,
    /// DR-IC with `τ` picked by estimated MSE.
    DrIc,
    /// DR-IC with `τ` picked against ground truth.
    DrIcOracle,
    /// Direct method with a Nadaraya-Watson reward model.
    DmNw,
    DrNw,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 10] = [
        EstimatorKind::Dm,
        EstimatorKind::Ips,
        EstimatorKind::Dr,
        EstimatorKind::SwitchDr,
        EstimatorKind::SwitchDrOracle,
        EstimatorKind::DmIb,
        EstimatorKind::DrIc,
        EstimatorKind::DrIcOracle,
        EstimatorKind::DmNw,
        EstimatorKind::DrNw,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            EstimatorKind::Dm => "dm",
            EstimatorKind::Ips => "ips",
            EstimatorKind::Dr => "dr",
            EstimatorKind::SwitchDr => "switch-dr",
            EstimatorKind::SwitchDrOracle => "switch-dr-oracle",
            EstimatorKind::DmIb => "dm-ib",
            EstimatorKind::DrIc => "dr-ic",
            EstimatorKind::DrIcOracle => "dr-ic-oracle",
            EstimatorKind::DmNw => "dm-nw",
            EstimatorKind::DrNw => "dr-nw",
        }
    }

    pub fn is_oracle(self) -> bool {
        matches!(self, EstimatorKind::SwitchDrOracle | EstimatorKind::DrIcOracle)
    }

    pub fn uses_ib(self) -> bool {
        matches!(
            self,
            EstimatorKind::DmIb | EstimatorKind::DrIc | EstimatorKind::DrIcOracle
        )
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for EstimatorKind {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Self::ALL
            .into_iter()
            .find(|k| k.tag() == s)
            .ok_or_else(|| BenchError::config(format!("unknown estimator `{s}`")))
    }
}

/// `lo`, `hi` and `count` of a geometric grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    /// Label written to the `dataset` column; defaults to the file stem.
    pub dataset_name: String,
    pub label_col: LabelColumn,
    pub has_header: bool,
    pub reward_mode: RewardMode,
    pub sizes: Vec<usize>,
    pub replicates: usize,
    pub seeds: usize,
    pub estimators: Vec<EstimatorKind>,
    pub base_seed: u64,
    pub train_fraction: f64,
    pub ridge_lambda: f64,
    pub cross_fit_folds: usize,
    pub base_kind: BaseKind,
    pub logistic: LogisticOptions<f64>,
    pub bandwidth_grid: GridSpec,
    pub kl_grid_count: usize,
    pub include_zero_quantile: bool,
    pub switch_grid_count: usize,
    /// `None` means 1, the bound for classification rewards.
    pub r_max: Option<f64>,
    /// Record per-estimator wall time; off by default so output is
    /// reproducible byte for byte.
    pub timing: bool,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::new(),
            dataset_name: String::new(),
            label_col: LabelColumn::Last,
            has_header: true,
            reward_mode: RewardMode::Deterministic,
            sizes: vec![100, 200, 500],
            replicates: 300,
            seeds: 10,
            estimators: vec![
                EstimatorKind::Dm,
                EstimatorKind::Ips,
                EstimatorKind::Dr,
                EstimatorKind::SwitchDr,
                EstimatorKind::DmIb,
                EstimatorKind::DrIc,
                EstimatorKind::DrIcOracle,
            ],
            base_seed: 0,
            train_fraction: 0.7,
            ridge_lambda: 1.0,
            cross_fit_folds: 3,
            base_kind: BaseKind::Ridge,
            logistic: LogisticOptions::default(),
            bandwidth_grid: GridSpec {
                lo: 0.01,
                hi: 15.0,
                count: 30,
            },
            kl_grid_count: 30,
            include_zero_quantile: true,
            switch_grid_count: dric_core::tuning::SWITCH_GRID_COUNT,
            r_max: None,
            timing: false,
            out: None,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| BenchError::config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "yes" | "1" | "" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(BenchError::config(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

impl ExperimentConfig {
    /// Sets one option by its flag name (`-` and `_` are interchangeable).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        let v = value.trim();
        match key.as_str() {
            "dataset" => self.dataset = PathBuf::from(v),
            "dataset-name" => self.dataset_name = v.to_string(),
            "label-col" => self.label_col = v.parse().expect("infallible"),
            "no-header" => self.has_header = !parse_bool(&key, v)?,
            "header" => self.has_header = parse_bool(&key, v)?,
            "reward" => self.reward_mode = v.parse()?,
            "sizes" => self.sizes = parse_list(&key, v)?,
            "replicates" => self.replicates = parse_num(&key, v)?,
            "seeds" => self.seeds = parse_num(&key, v)?,
            "estimators" => {
                self.estimators = v
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(str::parse)
                    .collect::<Result<_>>()?
            }
            "base-seed" => self.base_seed = parse_num(&key, v)?,
            "train-fraction" => self.train_fraction = parse_num(&key, v)?,
            "lambda" => self.ridge_lambda = parse_num(&key, v)?,
            "folds" => self.cross_fit_folds = parse_num(&key, v)?,
            "base" => {
                self.base_kind = match v {
                    "ridge" => BaseKind::Ridge,
                    "logistic" => BaseKind::Logistic,
                    _ => return Err(BenchError::config(format!("unknown base model `{v}`"))),
                }
            }
            "policy-l2" => self.logistic.l2_penalty = parse_num(&key, v)?,
            "policy-max-iters" => self.logistic.max_iters = parse_num(&key, v)?,
            "policy-tolerance" => self.logistic.tolerance = parse_num(&key, v)?,
            "policy-intercept" => self.logistic.intercept = parse_bool(&key, v)?,
            "bandwidth-lo" => self.bandwidth_grid.lo = parse_num(&key, v)?,
            "bandwidth-hi" => self.bandwidth_grid.hi = parse_num(&key, v)?,
            "bandwidth-count" => self.bandwidth_grid.count = parse_num(&key, v)?,
            "kl-grid-count" => self.kl_grid_count = parse_num(&key, v)?,
            "include-zero-quantile" => self.include_zero_quantile = parse_bool(&key, v)?,
            "switch-grid-count" => self.switch_grid_count = parse_num(&key, v)?,
            "r-max" => self.r_max = Some(parse_num(&key, v)?),
            "timing" => self.timing = parse_bool(&key, v)?,
            "out" => self.out = Some(PathBuf::from(v)),
            _ => return Err(BenchError::config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                BenchError::config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            cfg.set(key, value)
                .map_err(|e| BenchError::config(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::parse(&text)?;
        // relative dataset paths resolve against the config file
        if cfg.dataset.is_relative() && !cfg.dataset.as_os_str().is_empty() {
            if let Some(dir) = path.parent() {
                let candidate = dir.join(&cfg.dataset);
                if candidate.exists() {
                    cfg.dataset = candidate;
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(BenchError::config(m.to_string()));
        if self.dataset.as_os_str().is_empty() {
            return fail("no dataset given");
        }
        if self.replicates < 1 {
            return fail("replicates must be at least 1");
        }
        if self.seeds < 1 {
            return fail("seeds must be at least 1");
        }
        if self.sizes.is_empty() || self.sizes.iter().any(|&n| n < 2) {
            return fail("every sample size must be at least 2");
        }
        if self.estimators.is_empty() {
            return fail("no estimators selected");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return fail("train fraction must lie in (0, 1)");
        }
        if !(self.ridge_lambda >= 0.0) {
            return fail("ridge lambda must be non-negative");
        }
        if self.cross_fit_folds < 1 {
            return fail("cross-fit folds must be at least 1");
        }
        let g = self.bandwidth_grid;
        if !(g.lo > 0.0 && g.hi > g.lo) || g.count < 2 {
            return fail("bandwidth grid needs 0 < lo < hi and at least 2 values");
        }
        if self.kl_grid_count < 2 || self.switch_grid_count < 2 {
            return fail("threshold grids need at least 2 values");
        }
        if let Some(r) = self.r_max {
            if !(r > 0.0) {
                return fail("r-max must be positive");
            }
        }
        Ok(())
    }

    /// The `dataset` column value.
    pub fn dataset_label(&self) -> String {
        if !self.dataset_name.is_empty() {
            return self.dataset_name.clone();
        }
        self.dataset
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    }
}
