//! Command-line front end: config handling, run execution, sweeps, and
//! CSV output.

pub mod config;
pub mod output;

use std::fmt;
use std::path::PathBuf;

use rayon::prelude::*;

use config::{ConfigError, RunConfig, ScheduleSpec};
use gdro_core::gdro::{self, RunOutcome};
use gdro_core::types::PlaMode;

/// Top-level failure, split by exit code: configuration problems exit
/// with 2, runtime failures with 1.
#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "{e}"),
            CliError::Runtime(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

/// Runs one finalized config and returns the outcome without writing
/// anything.
pub fn execute_run(config: &RunConfig) -> Result<RunOutcome, CliError> {
    let env = config.build_environment()?;
    let options = config.run_options()?;
    gdro::run(&env, &options).map_err(|e| CliError::Runtime(e.to_string()))
}

/// Runs one config and writes its metrics CSV to `config.out`.
pub fn cmd_run(config: &RunConfig) -> Result<(), CliError> {
    let outcome = execute_run(config)?;
    output::write_metrics(&config.out, &outcome.rows).map_err(|e| {
        CliError::Runtime(format!("cannot write {}: {e}", config.out.display()))
    })?;
    Ok(())
}

/// Grid axes for a sweep. Empty axes fall back to the base config's
/// single value.
#[derive(Debug, Clone, Default)]
pub struct SweepAxes {
    /// Fixed budgets, one cell per value.
    pub budgets: Vec<usize>,
    /// Seeds, treated as replicates of each cell.
    pub seeds: Vec<u64>,
    /// Algorithms, one cell per value.
    pub algos: Vec<PlaMode>,
}

/// What a finished sweep produced: per-replicate outcomes in cell order
/// plus any failures, already written to disk.
#[derive(Debug)]
pub struct SweepReport {
    pub completed: usize,
    /// Output file name and error text of each failed replicate.
    pub failures: Vec<(String, String)>,
    pub summary_path: PathBuf,
}

fn algo_label(mode: PlaMode) -> &'static str {
    match mode {
        PlaMode::Unified => "unified",
        PlaMode::Hybrid => "hybrid",
    }
}

struct Replicate {
    config: RunConfig,
    file_name: String,
    cell: usize,
}

/// Runs the full grid under `base.out` as a directory: one CSV per
/// replicate plus `summary.csv` aggregating final risks per cell.
/// Individual failures do not stop the sweep; they are returned in the
/// report.
pub fn cmd_sweep(base: &RunConfig, axes: &SweepAxes) -> Result<SweepReport, CliError> {
    let algos = if axes.algos.is_empty() {
        vec![base.algo]
    } else {
        axes.algos.clone()
    };
    let schedules: Vec<ScheduleSpec> = if axes.budgets.is_empty() {
        vec![base
            .schedule
            .clone()
            .expect("finalized configs always carry a schedule")]
    } else {
        axes.budgets.iter().map(|&r| ScheduleSpec::Fixed(r)).collect()
    };
    let seeds = if axes.seeds.is_empty() {
        vec![base.seed]
    } else {
        axes.seeds.clone()
    };

    let dir = base.out.clone();
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;

    let mut replicates = Vec::new();
    let mut cells = Vec::new();
    for algo in &algos {
        for schedule in &schedules {
            cells.push((algo_label(*algo).to_string(), schedule.token()));
            let cell = cells.len() - 1;
            for &seed in &seeds {
                let file_name = format!(
                    "{}_{}_seed{}.csv",
                    algo_label(*algo),
                    schedule.file_token(),
                    seed
                );
                let mut config = base.clone();
                config.algo = *algo;
                config.schedule = Some(schedule.clone());
                config.seed = seed;
                config.out = dir.join(&file_name);
                replicates.push(Replicate {
                    config,
                    file_name,
                    cell,
                });
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(base.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Runtime(format!("cannot build thread pool: {e}")))?;
    let results: Vec<Result<f64, String>> = pool.install(|| {
        replicates
            .par_iter()
            .map(|replicate| {
                let mut config = replicate.config.clone();
                config
                    .finalize()
                    .map_err(|e| e.to_string())
                    .and_then(|()| {
                        let outcome = execute_run(&config).map_err(|e| e.to_string())?;
                        output::write_metrics(&config.out, &outcome.rows)
                            .map_err(|e| format!("cannot write {}: {e}", config.out.display()))?;
                        outcome
                            .rows
                            .last()
                            .map(|row| row.max_risk)
                            .ok_or_else(|| "no metric rows emitted".to_string())
                    })
            })
            .collect()
    });

    let mut finals_per_cell: Vec<Vec<f64>> = vec![Vec::new(); cells.len()];
    let mut failures = Vec::new();
    let mut completed = 0;
    for (replicate, result) in replicates.iter().zip(&results) {
        match result {
            Ok(final_risk) => {
                finals_per_cell[replicate.cell].push(*final_risk);
                completed += 1;
            }
            Err(message) => failures.push((replicate.file_name.clone(), message.clone())),
        }
    }

    let mut summary = String::from("algo,schedule,seeds,final_max_risk_mean,final_max_risk_std\n");
    for ((algo, schedule), finals) in cells.iter().zip(&finals_per_cell) {
        let (mean, std) = match finals.len() {
            0 => (String::new(), String::new()),
            n => {
                let mean = finals.iter().sum::<f64>() / n as f64;
                let std = if n == 1 {
                    0.0
                } else {
                    let variance = finals
                        .iter()
                        .map(|v| (v - mean) * (v - mean))
                        .sum::<f64>()
                        / (n - 1) as f64;
                    variance.sqrt()
                };
                (mean.to_string(), std.to_string())
            }
        };
        summary.push_str(&format!(
            "{algo},{schedule},{},{mean},{std}\n",
            finals.len()
        ));
    }
    let summary_path = dir.join("summary.csv");
    std::fs::write(&summary_path, summary)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", summary_path.display())))?;

    Ok(SweepReport {
        completed,
        failures,
        summary_path,
    })
}
