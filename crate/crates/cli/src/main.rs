use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gdro_cli::config::RunConfig;
use gdro_cli::{cmd_run, cmd_sweep, CliError, SweepAxes};
use gdro_core::types::PlaMode;

/// Group-robust training runs with per-round query budgets.
#[derive(Parser)]
#[command(name = "gdro", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one run and write its metrics CSV.
    Run(CommonArgs),
    /// Execute a grid of runs: per-replicate CSVs plus a summary table.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Config file of key=value lines; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// unified or hybrid.
    #[arg(long)]
    algo: Option<String>,
    /// synthetic or csv (csv details come from csv_* config keys).
    #[arg(long)]
    env: Option<String>,
    /// Number of groups.
    #[arg(long)]
    m: Option<usize>,
    /// Feature dimension for synthetic data.
    #[arg(long)]
    dim: Option<usize>,
    /// fixed:R, uniform:LO:HI, or file:PATH (one budget per line).
    #[arg(long)]
    schedule: Option<String>,
    /// Number of rounds.
    #[arg(long)]
    iters: Option<u64>,
    /// Run seed; all per-purpose random streams derive from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Emit a metrics row every this many rounds.
    #[arg(long)]
    eval_every: Option<u64>,
    /// Fresh samples per group for each risk evaluation.
    #[arg(long)]
    eval_samples: Option<usize>,
    /// Model ball radius.
    #[arg(long)]
    radius: Option<f64>,
    /// Record regret and duality-gap diagnostics (costs extra sampling).
    #[arg(long)]
    diagnostics: bool,
    /// Output CSV path (run) or output directory (sweep).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for sweeps; default uses all cores.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated fixed budgets, one sweep cell per value.
    #[arg(long)]
    r_list: Option<String>,
    /// Comma-separated seeds, treated as replicates of each cell.
    #[arg(long)]
    seed_list: Option<String>,
    /// Comma-separated algorithms (unified, hybrid), one cell per value.
    #[arg(long)]
    algo_list: Option<String>,
}

fn build_config(args: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut config = RunConfig::default();
    if let Some(path) = &args.config {
        config.apply_file(path)?;
    }
    if let Some(value) = &args.algo {
        config.apply("algo", value)?;
    }
    if let Some(value) = &args.env {
        config.apply("env", value)?;
    }
    if let Some(value) = args.m {
        config.apply("m", &value.to_string())?;
    }
    if let Some(value) = args.dim {
        config.apply("dim", &value.to_string())?;
    }
    if let Some(value) = &args.schedule {
        config.apply("schedule", value)?;
    }
    if let Some(value) = args.iters {
        config.apply("iters", &value.to_string())?;
    }
    if let Some(value) = args.seed {
        config.apply("seed", &value.to_string())?;
    }
    if let Some(value) = args.eval_every {
        config.apply("eval_every", &value.to_string())?;
    }
    if let Some(value) = args.eval_samples {
        config.apply("eval_samples", &value.to_string())?;
    }
    if let Some(value) = args.radius {
        config.apply("radius", &value.to_string())?;
    }
    if args.diagnostics {
        config.apply("diagnostics", "true")?;
    }
    if let Some(path) = &args.out {
        config.out = path.clone();
    }
    if let Some(value) = args.jobs {
        config.apply("jobs", &value.to_string())?;
    }
    config.finalize()?;
    Ok(config)
}

fn parse_axes(args: &SweepArgs) -> Result<SweepAxes, CliError> {
    let mut axes = SweepAxes::default();
    if let Some(text) = &args.r_list {
        for part in text.split(',') {
            axes.budgets.push(part.trim().parse().map_err(|_| {
                CliError::Runtime(format!("--r-list: {part:?} is not an integer"))
            })?);
        }
    }
    if let Some(text) = &args.seed_list {
        for part in text.split(',') {
            axes.seeds.push(part.trim().parse().map_err(|_| {
                CliError::Runtime(format!("--seed-list: {part:?} is not an integer"))
            })?);
        }
    }
    if let Some(text) = &args.algo_list {
        for part in text.split(',') {
            axes.algos.push(match part.trim() {
                "unified" => PlaMode::Unified,
                "hybrid" => PlaMode::Hybrid,
                other => {
                    return Err(CliError::Runtime(format!(
                        "--algo-list: {other:?} is not unified or hybrid"
                    )))
                }
            });
        }
    }
    Ok(axes)
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Run(args) => {
            let config = build_config(args)?;
            cmd_run(&config)?;
            eprintln!("wrote {}", config.out.display());
            Ok(())
        }
        Command::Sweep(args) => {
            let config = build_config(&args.common)?;
            let axes = parse_axes(args)?;
            let report = cmd_sweep(&config, &axes)?;
            eprintln!(
                "{} run(s) completed, summary at {}",
                report.completed,
                report.summary_path.display()
            );
            for (file, message) in &report.failures {
                eprintln!("failed {file}: {message}");
            }
            if report.failures.is_empty() {
                Ok(())
            } else {
                Err(CliError::Runtime(format!(
                    "{} run(s) failed",
                    report.failures.len()
                )))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error}");
            ExitCode::from(error.exit_code())
        }
    }
}
