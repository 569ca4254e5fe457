use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fusecast_cli::config::{synth_seed_pinned, ExperimentConfig};
use fusecast_cli::{run_verb, scatter_verb, synth_verb, tune_verb, CliError, RunStatus};

#[derive(Parser)]
#[command(name = "fusecast", version, about = "Market-pair fusion forecasting experiments")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
    /// Experiment config file (key = value lines). `synth` runs without
    /// one; every other verb requires it.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Global seed override (also re-seeds synthetic data unless the file
    /// pins synth.seed).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Worker threads for grid cells.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Verb {
    /// Run the full experiment grid and write report.json / report.txt.
    Run,
    /// Export per-feature scatter CSVs with regression sidecars.
    Scatter,
    /// Generate a synthetic market pair (domestic.csv, foreign.csv, truth.csv).
    Synth,
    /// Run one hyperparameter search and write trials.csv / best.json.
    Tune,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, String> {
    let (mut cfg, pinned) = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("read {}: {e}", path.display()))?;
            let cfg = ExperimentConfig::from_str(&text).map_err(|e| e.to_string())?;
            let pinned = synth_seed_pinned(&text);
            (cfg, pinned)
        }
        None if matches!(cli.verb, Verb::Synth) => {
            (ExperimentConfig::synthetic_defaults(cli.seed.unwrap_or(0)), false)
        }
        None => {
            return Err("--config is required for this verb (`synth` alone runs without one)"
                .to_string())
        }
    };
    cfg.apply_overrides(cli.seed, cli.jobs, pinned);
    Ok(cfg)
}

fn run(cli: &Cli, cfg: &ExperimentConfig) -> Result<RunStatus, CliError> {
    match cli.verb {
        Verb::Run => run_verb(cfg, &cli.out),
        Verb::Scatter => {
            let written = scatter_verb(cfg, &cli.out)?;
            eprintln!("scatter: wrote {} files to {}", written.len(), cli.out.display());
            Ok(RunStatus::Clean)
        }
        Verb::Synth => {
            let written = synth_verb(cfg, &cli.out)?;
            eprintln!("synth: wrote {} files to {}", written.len(), cli.out.display());
            Ok(RunStatus::Clean)
        }
        Verb::Tune => {
            let result = tune_verb(cfg, &cli.out)?;
            eprintln!(
                "tune: {} best validation MSE {:.6e} over {} completed trials",
                result.variant, result.best_val_mse, result.completed_trials
            );
            Ok(RunStatus::Clean)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load_config(&cli) {
        Ok(cfg) => cfg,
        Err(message) => {
            eprintln!("fusecast: {message}");
            return ExitCode::from(1);
        }
    };
    match run(&cli, &cfg) {
        Ok(RunStatus::Clean) => ExitCode::SUCCESS,
        Ok(RunStatus::PartialFailures) => {
            eprintln!("fusecast: some grid cells failed; see the report for details");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("fusecast: {e}");
            ExitCode::from(1)
        }
    }
}
