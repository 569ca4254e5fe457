//! Experiment runner around the `fusecast-core` library: a windowed grid
//! over scaling ranges and fusion variants (`run`), feature/target scatter
//! exports (`scatter`), synthetic dataset generation (`synth`), and a
//! single hyperparameter search (`tune`).

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use fusecast_core::data::write_csv;
use fusecast_core::features::{build_matrix, fit_scaler, transform_matrix};
use fusecast_core::num::derive_seed;
use fusecast_core::synth::generate_coupled_markets;
use fusecast_core::tpe::{optimize, write_trials_csv, SearchSpace, TpeConfig, TrialConfig};
use fusecast_core::train::{evaluate_validation, train_fusion, TrainData};

pub mod config;
pub mod grid;
pub mod report;
pub mod scatter;

use config::{DataSource, ExperimentConfig};
use grid::{decode_standard, load_pair, run_grid, GridError};
use report::emit_report;
use scatter::{export_scatter_data, ScatterError};

/// Seed streams for the `tune` verb, disjoint from the grid's cell streams
/// (packed coordinates) and the scatter streams (3000-range).
const STREAM_TUNE_TPE: u64 = 4000;
const STREAM_TUNE_TRIAL_BASE: u64 = 5000;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Scatter(#[from] ScatterError),
    #[error("`synth` needs a synthetic data source (set data.synthetic = true)")]
    SynthNeedsSyntheticSource,
    #[error("write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

/// Outcome of the `run` verb, mapped to the process exit code by `main`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    /// Every cell completed.
    Clean,
    /// At least one cell failed; the report marks which.
    PartialFailures,
}

/// Runs the full grid and writes `report.json` + `report.txt`.
pub fn run_verb(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunStatus, CliError> {
    let run = run_grid(cfg)?;
    emit_report(&run, cfg, out_dir).map_err(|source| CliError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    Ok(if run.any_failed() {
        RunStatus::PartialFailures
    } else {
        RunStatus::Clean
    })
}

/// Writes per-feature scatter CSVs and regression sidecars.
pub fn scatter_verb(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    Ok(export_scatter_data(cfg, out_dir)?)
}

/// Generates the configured synthetic market pair and writes it as two
/// vendor-shaped OHLC CSVs plus `truth.csv`, the generator's hidden state
/// (per feature row: date, the foreign signal, the next-day target).
pub fn synth_verb(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let DataSource::Synthetic(synth_cfg) = &cfg.source else {
        return Err(CliError::SynthNeedsSyntheticSource);
    };
    let markets = generate_coupled_markets(synth_cfg).map_err(GridError::from)?;
    ensure_dir(out_dir)?;

    let mut written = Vec::new();
    for (name, series) in [
        ("domestic.csv", &markets.pair.domestic),
        ("foreign.csv", &markets.pair.foreign),
    ] {
        let path = out_dir.join(name);
        let mut buf = Vec::new();
        write_csv(series, &mut buf).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
        write_file(&path, std::str::from_utf8(&buf).expect("CSV is UTF-8"))?;
        written.push(path);
    }

    let mut truth = String::from("date,foreign_octc,target\n");
    for (i, (signal, target)) in markets
        .foreign_signal
        .iter()
        .zip(&markets.targets)
        .enumerate()
    {
        let date = markets.pair.dates[i + 1];
        truth.push_str(&format!("{date},{signal},{target}\n"));
    }
    let truth_path = out_dir.join("truth.csv");
    write_file(&truth_path, &truth)?;
    written.push(truth_path);
    Ok(written)
}

/// Best configuration found by `tune`, shaped for `best.json`.
#[derive(Debug, Clone, serde::Serialize)]
pub struct TuneResult {
    pub variant: String,
    pub scaling: String,
    pub best_config: serde_json::Map<String, serde_json::Value>,
    pub best_val_mse: f64,
    pub completed_trials: usize,
}

/// Runs one TPE search for the configured `tune.variant` over the full
/// dataset (no window restriction) using the first scaling range, and
/// writes `trials.csv` + `best.json`.
pub fn tune_verb(cfg: &ExperimentConfig, out_dir: &Path) -> Result<TuneResult, CliError> {
    let pair = load_pair(&cfg.source)?;
    let raw = build_matrix(&pair).map_err(GridError::from)?;
    let split = fusecast_core::data::DataSplit::chronological(
        raw.len(),
        fusecast_core::data::DEFAULT_TRAIN_FRAC,
        fusecast_core::data::DEFAULT_VAL_FRAC_OF_TRAIN,
    )
    .map_err(GridError::from)?;
    let scaling = cfg.scalings[0];
    let scaler = fit_scaler(&raw, &split, scaling).map_err(GridError::from)?;
    let scaled = transform_matrix(&scaler, &raw);
    let data = TrainData::from_matrix(&scaled, &split);

    let space = SearchSpace::standard();
    let tpe_cfg = TpeConfig::new(cfg.tpe_trials, derive_seed(cfg.seed, STREAM_TUNE_TPE));
    let mut rng = ChaCha8Rng::seed_from_u64(tpe_cfg.seed);
    let variant = cfg.tune_variant;
    let mut trial_index = 0u64;
    let objective = |config: &TrialConfig| {
        let seed = derive_seed(cfg.seed, STREAM_TUNE_TRIAL_BASE + trial_index);
        trial_index += 1;
        match decode_standard(config, &space, variant, seed) {
            Ok((spec, train_cfg)) => match train_fusion(&spec, &data, &train_cfg) {
                Ok(trained) => evaluate_validation(&trained.model, &data),
                Err(_) => f64::NAN,
            },
            Err(_) => f64::NAN,
        }
    };
    let (best, history) = optimize(objective, &space, &tpe_cfg, &mut rng).map_err(GridError::from)?;

    ensure_dir(out_dir)?;
    let trials_path = out_dir.join("trials.csv");
    let mut buf = Vec::new();
    write_trials_csv(&space, &history, &mut buf).map_err(|source| CliError::Io {
        path: trials_path.clone(),
        source,
    })?;
    write_file(&trials_path, std::str::from_utf8(&buf).expect("CSV is UTF-8"))?;

    let result = TuneResult {
        variant: variant.to_string(),
        scaling: format!("[{},{}]", scaling.0, scaling.1),
        best_config: space
            .dimensions()
            .iter()
            .zip(best.config.values())
            .map(|(dim, value)| {
                let json = match value {
                    fusecast_core::tpe::HyperValue::Int(v) => serde_json::Value::from(*v),
                    fusecast_core::tpe::HyperValue::Float(v) => serde_json::Value::from(*v),
                    fusecast_core::tpe::HyperValue::Name(s) => {
                        serde_json::Value::from(s.as_str())
                    }
                };
                (dim.name().to_string(), json)
            })
            .collect(),
        best_val_mse: best.outcome.loss().unwrap_or(f64::NAN),
        completed_trials: history.iter().filter(|t| t.outcome.is_completed()).count(),
    };
    let mut json = serde_json::to_string_pretty(&result).expect("tune result serializes");
    json.push('\n');
    write_file(&out_dir.join("best.json"), &json)?;
    Ok(result)
}
