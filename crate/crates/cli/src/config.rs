//! Run configuration: a flat key=value format shared by config files and
//! command-line flags, with flags taking precedence.

use std::fmt;
use std::path::PathBuf;

use gdro_core::env::{
    ingest_grouped_csv, BudgetSchedule, CsvSpec, GroupEnvironment, LossOverrides, SyntheticConfig,
};
use gdro_core::gdro::RunOptions;
use gdro_core::types::PlaMode;

/// A configuration problem, always attributed to one key.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: String,
    pub detail: String,
}

impl ConfigError {
    fn new(key: &str, detail: impl Into<String>) -> Self {
        Self {
            key: key.to_string(),
            detail: detail.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config key '{}': {}", self.key, self.detail)
    }
}

impl std::error::Error for ConfigError {}

/// Where the data comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    Synthetic,
    Csv,
}

/// Budget schedule as written in a config: resolved to the core schedule
/// only when the run starts, so file-based schedules round-trip by path.
#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleSpec {
    Fixed(usize),
    Uniform(usize, usize),
    File(PathBuf),
}

impl ScheduleSpec {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let parts: Vec<&str> = text.split(':').collect();
        let bad = || {
            ConfigError::new(
                "schedule",
                format!("{text:?} is not fixed:R, uniform:LO:HI, or file:PATH"),
            )
        };
        match parts.as_slice() {
            ["fixed", r] => Ok(ScheduleSpec::Fixed(r.parse().map_err(|_| bad())?)),
            ["uniform", lo, hi] => Ok(ScheduleSpec::Uniform(
                lo.parse().map_err(|_| bad())?,
                hi.parse().map_err(|_| bad())?,
            )),
            ["file", path] if !path.is_empty() => Ok(ScheduleSpec::File(PathBuf::from(path))),
            _ => Err(bad()),
        }
    }

    /// The config-file text for this schedule.
    pub fn token(&self) -> String {
        match self {
            ScheduleSpec::Fixed(r) => format!("fixed:{r}"),
            ScheduleSpec::Uniform(lo, hi) => format!("uniform:{lo}:{hi}"),
            ScheduleSpec::File(path) => format!("file:{}", path.display()),
        }
    }

    /// A short form usable inside output filenames.
    pub fn file_token(&self) -> String {
        match self {
            ScheduleSpec::Fixed(r) => format!("fixed{r}"),
            ScheduleSpec::Uniform(lo, hi) => format!("uniform{lo}-{hi}"),
            ScheduleSpec::File(_) => "list".to_string(),
        }
    }

    /// Loads the core schedule, reading list files here.
    pub fn to_schedule(&self) -> Result<BudgetSchedule, ConfigError> {
        match self {
            ScheduleSpec::Fixed(r) => Ok(BudgetSchedule::Fixed(*r)),
            ScheduleSpec::Uniform(lo, hi) => {
                Ok(BudgetSchedule::UniformRandom { lo: *lo, hi: *hi })
            }
            ScheduleSpec::File(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    ConfigError::new("schedule", format!("cannot read {}: {e}", path.display()))
                })?;
                let mut budgets = Vec::new();
                for (number, line) in text.lines().enumerate() {
                    let line = line.trim();
                    if line.is_empty() {
                        continue;
                    }
                    budgets.push(line.parse().map_err(|_| {
                        ConfigError::new(
                            "schedule",
                            format!("line {}: {line:?} is not an integer", number + 1),
                        )
                    })?);
                }
                if budgets.is_empty() {
                    return Err(ConfigError::new("schedule", "schedule file is empty"));
                }
                Ok(BudgetSchedule::FromList(budgets))
            }
        }
    }
}

/// CSV environment keys; only consulted when `env = csv`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CsvKeys {
    pub path: Option<PathBuf>,
    pub features: Option<Vec<String>>,
    pub label: Option<String>,
    pub groups: Option<Vec<String>>,
    pub positive: Option<String>,
    pub negative: Option<String>,
}

/// Everything one run needs, before validation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub algo: PlaMode,
    pub env: EnvKind,
    pub m: usize,
    pub dim: usize,
    pub noise: f64,
    pub similarity: f64,
    pub data_seed: u64,
    pub schedule: Option<ScheduleSpec>,
    pub iters: u64,
    pub seed: u64,
    pub eval_every: u64,
    pub eval_samples: usize,
    pub radius: f64,
    pub feature_cap: Option<f64>,
    pub normalizer: Option<f64>,
    pub grad_bound: Option<f64>,
    pub diagnostics: bool,
    pub offline_iters: usize,
    pub out: PathBuf,
    pub jobs: Option<usize>,
    pub csv: CsvKeys,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            algo: PlaMode::Unified,
            env: EnvKind::Synthetic,
            m: 10,
            dim: 50,
            noise: 0.1,
            similarity: 0.0,
            data_seed: 0,
            schedule: None,
            iters: 10_000,
            seed: 0,
            eval_every: 100,
            eval_samples: 10_000,
            radius: 1.0,
            feature_cap: None,
            normalizer: None,
            grad_bound: None,
            diagnostics: false,
            offline_iters: 500,
            out: PathBuf::from("metrics.csv"),
            jobs: None,
            csv: CsvKeys::default(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .trim()
        .parse()
        .map_err(|_| ConfigError::new(key, format!("cannot parse {value:?}")))
}

fn parse_auto(key: &str, value: &str) -> Result<Option<f64>, ConfigError> {
    if value.trim() == "auto" {
        Ok(None)
    } else {
        parse_num(key, value).map(Some)
    }
}

fn parse_list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

impl RunConfig {
    /// Applies one key=value assignment.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "algo" => {
                self.algo = match value.trim() {
                    "unified" => PlaMode::Unified,
                    "hybrid" => PlaMode::Hybrid,
                    other => {
                        return Err(ConfigError::new(
                            "algo",
                            format!("{other:?} is not unified or hybrid"),
                        ))
                    }
                }
            }
            "env" => {
                self.env = match value.trim() {
                    "synthetic" => EnvKind::Synthetic,
                    "csv" => EnvKind::Csv,
                    other => {
                        return Err(ConfigError::new(
                            "env",
                            format!("{other:?} is not synthetic or csv"),
                        ))
                    }
                }
            }
            "m" => self.m = parse_num(key, value)?,
            "dim" => self.dim = parse_num(key, value)?,
            "noise" => self.noise = parse_num(key, value)?,
            "similarity" => self.similarity = parse_num(key, value)?,
            "data_seed" => self.data_seed = parse_num(key, value)?,
            "schedule" => self.schedule = Some(ScheduleSpec::parse(value.trim())?),
            "iters" => self.iters = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "eval_every" => self.eval_every = parse_num(key, value)?,
            "eval_samples" => self.eval_samples = parse_num(key, value)?,
            "radius" => self.radius = parse_num(key, value)?,
            "feature_cap" => self.feature_cap = parse_auto(key, value)?,
            "normalizer" => self.normalizer = parse_auto(key, value)?,
            "grad_bound" => self.grad_bound = parse_auto(key, value)?,
            "diagnostics" => {
                self.diagnostics = match value.trim() {
                    "true" => true,
                    "false" => false,
                    other => {
                        return Err(ConfigError::new(
                            "diagnostics",
                            format!("{other:?} is not true or false"),
                        ))
                    }
                }
            }
            "offline_iters" => self.offline_iters = parse_num(key, value)?,
            "out" => self.out = PathBuf::from(value.trim()),
            "jobs" => self.jobs = Some(parse_num(key, value)?),
            "csv_path" => self.csv.path = Some(PathBuf::from(value.trim())),
            "csv_features" => self.csv.features = Some(parse_list(value)),
            "csv_label" => self.csv.label = Some(value.trim().to_string()),
            "csv_groups" => self.csv.groups = Some(parse_list(value)),
            "csv_positive" => self.csv.positive = Some(value.trim().to_string()),
            "csv_negative" => self.csv.negative = Some(value.trim().to_string()),
            other => return Err(ConfigError::new(other, "unknown key")),
        }
        Ok(())
    }

    /// Parses a whole config file: one key=value per line, '#' comments.
    pub fn apply_file(&mut self, path: &std::path::Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            ConfigError::new("config", format!("cannot read {}: {e}", path.display()))
        })?;
        for (number, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                ConfigError::new("config", format!("line {}: expected key=value", number + 1))
            })?;
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Fills derived defaults and checks every documented range. After
    /// this, `schedule` is always `Some`.
    pub fn finalize(&mut self) -> Result<(), ConfigError> {
        if self.m < 2 {
            return Err(ConfigError::new("m", "need at least 2 groups"));
        }
        if self.env == EnvKind::Synthetic && self.dim == 0 {
            return Err(ConfigError::new("dim", "need at least 1 dimension"));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(ConfigError::new("noise", "must be in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.similarity) {
            return Err(ConfigError::new("similarity", "must be in [0, 1]"));
        }
        if self.iters == 0 {
            return Err(ConfigError::new("iters", "must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(ConfigError::new("eval_every", "must be at least 1"));
        }
        if self.eval_samples == 0 {
            return Err(ConfigError::new("eval_samples", "must be at least 1"));
        }
        if self.offline_iters == 0 {
            return Err(ConfigError::new("offline_iters", "must be at least 1"));
        }
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(ConfigError::new("radius", "must be positive"));
        }
        if self.jobs == Some(0) {
            return Err(ConfigError::new("jobs", "must be at least 1"));
        }
        if self.schedule.is_none() {
            self.schedule = Some(ScheduleSpec::Uniform(1, (self.m - 1).max(1)));
        }
        match self.schedule.as_ref().unwrap() {
            ScheduleSpec::Fixed(r) => {
                if *r < 1 || *r > self.m {
                    return Err(ConfigError::new(
                        "schedule",
                        format!("fixed budget {r} outside [1, {}]", self.m),
                    ));
                }
            }
            ScheduleSpec::Uniform(lo, hi) => {
                if *lo < 1 || lo > hi || *hi > self.m {
                    return Err(ConfigError::new(
                        "schedule",
                        format!("uniform bounds [{lo}, {hi}] invalid for m = {}", self.m),
                    ));
                }
            }
            ScheduleSpec::File(_) => {}
        }
        if self.env == EnvKind::Csv {
            if self.csv.path.is_none() {
                return Err(ConfigError::new("csv_path", "required when env = csv"));
            }
            if self.csv.features.as_ref().is_none_or(|f| f.is_empty()) {
                return Err(ConfigError::new("csv_features", "required when env = csv"));
            }
            if self.csv.label.is_none() {
                return Err(ConfigError::new("csv_label", "required when env = csv"));
            }
            if self.csv.groups.as_ref().is_none_or(|g| g.is_empty()) {
                return Err(ConfigError::new("csv_groups", "required when env = csv"));
            }
            if self.csv.positive.is_none() {
                return Err(ConfigError::new("csv_positive", "required when env = csv"));
            }
        }
        Ok(())
    }

    /// Serializes back to the file format; parsing the result reproduces
    /// this config exactly.
    pub fn serialize(&self) -> String {
        let mut lines = Vec::new();
        lines.push(format!(
            "algo={}",
            match self.algo {
                PlaMode::Unified => "unified",
                PlaMode::Hybrid => "hybrid",
            }
        ));
        lines.push(format!(
            "env={}",
            match self.env {
                EnvKind::Synthetic => "synthetic",
                EnvKind::Csv => "csv",
            }
        ));
        lines.push(format!("m={}", self.m));
        lines.push(format!("dim={}", self.dim));
        lines.push(format!("noise={}", self.noise));
        lines.push(format!("similarity={}", self.similarity));
        lines.push(format!("data_seed={}", self.data_seed));
        if let Some(schedule) = &self.schedule {
            lines.push(format!("schedule={}", schedule.token()));
        }
        lines.push(format!("iters={}", self.iters));
        lines.push(format!("seed={}", self.seed));
        lines.push(format!("eval_every={}", self.eval_every));
        lines.push(format!("eval_samples={}", self.eval_samples));
        lines.push(format!("radius={}", self.radius));
        let auto = |v: Option<f64>| v.map_or("auto".to_string(), |x| x.to_string());
        lines.push(format!("feature_cap={}", auto(self.feature_cap)));
        lines.push(format!("normalizer={}", auto(self.normalizer)));
        lines.push(format!("grad_bound={}", auto(self.grad_bound)));
        lines.push(format!("diagnostics={}", self.diagnostics));
        lines.push(format!("offline_iters={}", self.offline_iters));
        lines.push(format!("out={}", self.out.display()));
        if let Some(jobs) = self.jobs {
            lines.push(format!("jobs={jobs}"));
        }
        if let Some(path) = &self.csv.path {
            lines.push(format!("csv_path={}", path.display()));
        }
        if let Some(features) = &self.csv.features {
            lines.push(format!("csv_features={}", features.join(",")));
        }
        if let Some(label) = &self.csv.label {
            lines.push(format!("csv_label={label}"));
        }
        if let Some(groups) = &self.csv.groups {
            lines.push(format!("csv_groups={}", groups.join(",")));
        }
        if let Some(positive) = &self.csv.positive {
            lines.push(format!("csv_positive={positive}"));
        }
        if let Some(negative) = &self.csv.negative {
            lines.push(format!("csv_negative={negative}"));
        }
        lines.join("\n") + "\n"
    }

    fn overrides(&self) -> LossOverrides {
        LossOverrides {
            feature_cap: self.feature_cap,
            normalizer: self.normalizer,
            grad_bound: self.grad_bound,
        }
    }

    /// Builds the environment this config describes. Call after
    /// `finalize`.
    pub fn build_environment(&self) -> Result<GroupEnvironment, ConfigError> {
        match self.env {
            EnvKind::Synthetic => {
                let config = SyntheticConfig {
                    groups: self.m,
                    dim: self.dim,
                    flip_probability: self.noise,
                    similarity: self.similarity,
                    seed: self.data_seed,
                    radius: self.radius,
                    overrides: self.overrides(),
                };
                GroupEnvironment::synthetic(&config)
                    .map_err(|e| ConfigError::new("env", e.to_string()))
            }
            EnvKind::Csv => {
                let spec = CsvSpec {
                    path: self.csv.path.clone().expect("checked in finalize"),
                    feature_cols: self.csv.features.clone().expect("checked in finalize"),
                    label_col: self.csv.label.clone().expect("checked in finalize"),
                    group_cols: self.csv.groups.clone().expect("checked in finalize"),
                    positive_label: self.csv.positive.clone().expect("checked in finalize"),
                    negative_label: self.csv.negative.clone(),
                    radius: self.radius,
                    overrides: self.overrides(),
                };
                ingest_grouped_csv(&spec).map_err(|e| ConfigError::new("csv_path", e.to_string()))
            }
        }
    }

    /// Builds the core run options. Call after `finalize`.
    pub fn run_options(&self) -> Result<RunOptions, ConfigError> {
        let schedule = self
            .schedule
            .as_ref()
            .expect("finalize fills the schedule")
            .to_schedule()?;
        Ok(RunOptions {
            mode: self.algo,
            schedule,
            iters: self.iters,
            seed: self.seed,
            eval_every: self.eval_every,
            eval_samples: self.eval_samples,
            diagnostics: self.diagnostics,
            offline_iters: self.offline_iters,
        })
    }
}
