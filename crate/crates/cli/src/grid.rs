//! The experiment grid: for every (window, scaling range, variant) cell,
//! tune hyperparameters on train/validation, retrain the winner, and score
//! the untouched test partition with denormalized metrics.
//!
//! Look-ahead hygiene is structural: the scaler is fitted on training rows
//! only, the TPE objective sees only train/validation data, and test rows
//! are read exactly once — after the winning configuration is frozen. Every
//! cell derives its own seed from the global seed and its coordinates, so
//! cells are independent, parallelizable, and reproducible in isolation.

use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use fusecast_core::data::{align_calendars, parse_csv, AlignedPair, DataSplit};
use fusecast_core::eval::{baseline_buy_hold, baseline_momentum_foreign, EvalReport};
use fusecast_core::features::{
    build_matrix, fit_scaler, transform_matrix, FeatureMatrix, TARGET_COLUMN,
};
use fusecast_core::fusion::{ModelSpec, Variant};
use fusecast_core::nn::{Activation, OptimizerKind};
use fusecast_core::num::derive_seed;
use fusecast_core::synth::generate_coupled_markets;
use fusecast_core::tpe::{
    optimize, HyperValue, SearchSpace, Trial, TrialConfig, TpeConfig,
};
use fusecast_core::train::{
    predict_partition, train_fusion, TrainConfig, TrainData, DEFAULT_PATIENCE,
};

use crate::config::{DataSource, ExperimentConfig, Window};

/// Seed streams, kept disjoint per cell: retraining the winner, the TPE
/// draw sequence, and one stream per trial's training run.
const STREAM_RETRAIN: u64 = 1;
const STREAM_TPE: u64 = 2;
const STREAM_TRIAL_BASE: u64 = 1000;

#[derive(Debug, Error)]
pub enum GridError {
    #[error(transparent)]
    Data(#[from] fusecast_core::data::DataError),
    #[error(transparent)]
    Synth(#[from] fusecast_core::synth::SynthError),
    #[error(transparent)]
    Feature(#[from] fusecast_core::features::FeatureError),
    #[error(transparent)]
    Scale(#[from] fusecast_core::features::ScaleError),
    #[error(transparent)]
    Train(#[from] fusecast_core::train::TrainError),
    #[error(transparent)]
    Tpe(#[from] fusecast_core::tpe::TpeError),
    #[error(transparent)]
    Eval(#[from] fusecast_core::eval::EvalError),
    #[error("config decode: {0}")]
    Decode(String),
}

/// Loads and calendar-aligns the configured market pair.
pub fn load_pair(source: &DataSource) -> Result<AlignedPair, GridError> {
    match source {
        DataSource::Files { domestic, foreign } => {
            let dom = parse_csv(domestic, "domestic")?;
            let for_ = parse_csv(foreign, "foreign")?;
            Ok(align_calendars(&dom, &for_)?)
        }
        DataSource::Synthetic(cfg) => Ok(generate_coupled_markets(cfg)?.pair),
    }
}

/// Turns one point of the standard search space into a model spec and a
/// training config.
pub fn decode_standard(
    config: &TrialConfig,
    space: &SearchSpace,
    variant: Variant,
    seed: u64,
) -> Result<(ModelSpec, TrainConfig), GridError> {
    fn want<T>(value: Option<T>, dim: &str) -> Result<T, GridError> {
        value.ok_or_else(|| GridError::Decode(format!("dimension `{dim}` missing or mistyped")))
    }
    let int = |dim: &str| want(config.value(space, dim).and_then(HyperValue::as_u64), dim);
    let float = |dim: &str| want(config.value(space, dim).and_then(HyperValue::as_f64), dim);
    let name = |dim: &str| {
        want(
            config.value(space, dim).and_then(HyperValue::as_name),
            dim,
        )
    };

    let activation = Activation::from_str(name("activation")?)
        .map_err(|e| GridError::Decode(e.to_string()))?;
    let optimizer = OptimizerKind::from_str(name("optimizer")?)
        .map_err(|e| GridError::Decode(e.to_string()))?;
    let spec = ModelSpec::new(
        variant,
        int("hidden_layers")? as usize,
        int("hidden_units")? as usize,
        activation,
        float("dropout")?,
    )
    .map_err(|e| GridError::Decode(e.to_string()))?;
    let train = TrainConfig::new(
        int("batch_size")? as usize,
        int("epochs")? as usize,
        DEFAULT_PATIENCE,
        optimizer,
        float("learning_rate")?,
        seed,
    )
    .map_err(|e| GridError::Decode(e.to_string()))?;
    Ok((spec, train))
}

/// Everything produced by one successful cell.
#[derive(Debug, Clone, Serialize)]
pub struct CellResult {
    pub report: EvalReport,
    /// Winning hyperparameters, keyed by dimension name.
    pub best_config: serde_json::Map<String, serde_json::Value>,
    pub best_val_mse: f64,
    pub completed_trials: usize,
}

fn config_map(space: &SearchSpace, trial: &Trial) -> serde_json::Map<String, serde_json::Value> {
    space
        .dimensions()
        .iter()
        .zip(trial.config.values())
        .map(|(dim, value)| {
            let json = match value {
                HyperValue::Int(v) => serde_json::Value::from(*v),
                HyperValue::Float(v) => serde_json::Value::from(*v),
                HyperValue::Name(s) => serde_json::Value::from(s.as_str()),
            };
            (dim.name().to_string(), json)
        })
        .collect()
}

/// Tunes, retrains, and scores one grid cell on a pre-built raw feature
/// matrix. `cell_seed` isolates this cell's entire randomness.
pub fn run_cell(
    raw: &FeatureMatrix,
    scaling: (f64, f64),
    variant: Variant,
    tpe_trials: usize,
    cell_seed: u64,
) -> Result<CellResult, GridError> {
    let split = DataSplit::chronological(
        raw.len(),
        fusecast_core::data::DEFAULT_TRAIN_FRAC,
        fusecast_core::data::DEFAULT_VAL_FRAC_OF_TRAIN,
    )?;
    let scaler = fit_scaler(raw, &split, scaling)?;
    let scaled = transform_matrix(&scaler, raw);
    let data = TrainData::from_matrix(&scaled, &split);

    let space = SearchSpace::standard();
    let tpe_cfg = TpeConfig::new(tpe_trials, derive_seed(cell_seed, STREAM_TPE));
    let mut rng = rand_seeded(tpe_cfg.seed);
    let mut trial_index = 0u64;
    let objective = |config: &TrialConfig| {
        let trial_seed = derive_seed(cell_seed, STREAM_TRIAL_BASE + trial_index);
        trial_index += 1;
        match decode_standard(config, &space, variant, trial_seed) {
            Ok((spec, train_cfg)) => match train_fusion(&spec, &data, &train_cfg) {
                Ok(trained) => fusecast_core::train::evaluate_validation(&trained.model, &data),
                Err(_) => f64::NAN,
            },
            Err(_) => f64::NAN,
        }
    };
    let (best, history) = optimize(objective, &space, &tpe_cfg, &mut rng)?;

    let (spec, train_cfg) = decode_standard(
        &best.config,
        &space,
        variant,
        derive_seed(cell_seed, STREAM_RETRAIN),
    )?;
    let trained = train_fusion(&spec, &data, &train_cfg)?;

    // Test rows are touched here for the first time: predict in scaled
    // space, denormalize, and score against the raw targets.
    let test = split.test();
    let scaled_preds = predict_partition(&trained.model, &data, test.clone());
    let preds: Vec<f64> = scaled_preds
        .iter()
        .map(|&p| scaler.inverse_transform(p, TARGET_COLUMN))
        .collect();
    let actuals = raw.select(test).targets();
    let report = EvalReport::from_predictions(&preds, &actuals)?;

    Ok(CellResult {
        report,
        best_config: config_map(&space, &best),
        best_val_mse: best.outcome.loss().unwrap_or(f64::NAN),
        completed_trials: history.iter().filter(|t| t.outcome.is_completed()).count(),
    })
}

fn rand_seeded(seed: u64) -> impl rand::Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

/// Rule-baseline scores on the test partition of a window's raw matrix —
/// the same days the models are scored on.
#[derive(Debug, Clone, Serialize)]
pub struct BaselineReports {
    pub momentum_domestic: EvalReport,
    pub momentum_foreign: EvalReport,
    pub buy_hold: EvalReport,
}

/// Index of the close-over-previous-close return within one market's
/// five-feature block.
const OCTC: usize = 3;

pub fn window_baselines(raw: &FeatureMatrix, split: &DataSplit) -> Result<BaselineReports, GridError> {
    let test = raw.select(split.test());
    let targets = test.targets();
    let domestic_today: Vec<f64> = test.domestic_inputs().iter().map(|r| r[OCTC]).collect();
    let foreign_today: Vec<f64> = test.foreign_inputs().iter().map(|r| r[OCTC]).collect();
    Ok(BaselineReports {
        // Row t already pairs day-t features with the day-t+1 target, so
        // both momentum rules reduce to sign agreement across each row.
        momentum_domestic: EvalReport::from_predictions(&domestic_today, &targets)?,
        momentum_foreign: baseline_momentum_foreign(&foreign_today, &targets)?,
        buy_hold: baseline_buy_hold(&targets)?,
    })
}

/// Coordinates of one cell in the grid, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct CellKey {
    pub window: usize,
    pub scaling: usize,
    pub variant: usize,
}

/// Packs the coordinates into the seed-derivation stream.
fn cell_stream(key: CellKey) -> u64 {
    ((key.window as u64) << 32) | ((key.scaling as u64) << 16) | key.variant as u64
}

/// One grid entry: a result or the error that stopped the cell.
pub type CellOutcome = (CellKey, Result<CellResult, String>);

/// Per-window preparation: restricted pair, raw features, split, baselines.
pub struct WindowData {
    pub window: Window,
    pub raw: FeatureMatrix,
    pub split: DataSplit,
    pub baselines: BaselineReports,
}

pub fn prepare_window(pair: &AlignedPair, window: Window) -> Result<WindowData, GridError> {
    let restricted = pair.restrict_window(window.start, window.end)?;
    let raw = build_matrix(&restricted)?;
    let split = DataSplit::chronological(
        raw.len(),
        fusecast_core::data::DEFAULT_TRAIN_FRAC,
        fusecast_core::data::DEFAULT_VAL_FRAC_OF_TRAIN,
    )?;
    let baselines = window_baselines(&raw, &split)?;
    Ok(WindowData {
        window,
        raw,
        split,
        baselines,
    })
}

/// Everything `run` computes, in deterministic cell order.
pub struct GridRun {
    pub windows: Vec<(Window, Result<BaselineReports, String>)>,
    pub cells: Vec<CellOutcome>,
}

impl GridRun {
    pub fn any_failed(&self) -> bool {
        self.cells.iter().any(|(_, r)| r.is_err())
            || self.windows.iter().any(|(_, b)| b.is_err())
    }
}

/// Runs the whole grid. Window preparation failures mark all of that
/// window's cells failed without aborting the rest; cell failures are
/// likewise isolated. Cells run on a `jobs`-wide worker pool and results
/// are ordered by coordinate regardless of scheduling.
pub fn run_grid(cfg: &ExperimentConfig) -> Result<GridRun, GridError> {
    let pair = load_pair(&cfg.source)?;
    let prepared: Vec<(Window, Result<WindowData, String>)> = cfg
        .windows
        .iter()
        .map(|&w| (w, prepare_window(&pair, w).map_err(|e| e.to_string())))
        .collect();

    let mut tasks: Vec<(CellKey, &WindowData)> = Vec::new();
    let mut failed_cells: Vec<CellOutcome> = Vec::new();
    for (w_idx, (_, prep)) in prepared.iter().enumerate() {
        for s_idx in 0..cfg.scalings.len() {
            for v_idx in 0..cfg.variants.len() {
                let key = CellKey {
                    window: w_idx,
                    scaling: s_idx,
                    variant: v_idx,
                };
                match prep {
                    Ok(data) => tasks.push((key, data)),
                    Err(e) => failed_cells.push((key, Err(format!("window preparation: {e}")))),
                }
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .expect("worker pool");
    let mut cells: Vec<CellOutcome> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(key, data)| {
                let seed = derive_seed(cfg.seed, cell_stream(key));
                let result = run_cell(
                    &data.raw,
                    cfg.scalings[key.scaling],
                    cfg.variants[key.variant],
                    cfg.tpe_trials,
                    seed,
                )
                .map_err(|e| e.to_string());
                (key, result)
            })
            .collect()
    });
    cells.extend(failed_cells);
    cells.sort_by_key(|(key, _)| *key);

    Ok(GridRun {
        windows: prepared
            .into_iter()
            .map(|(w, prep)| (w, prep.map(|d| d.baselines)))
            .collect(),
        cells,
    })
}
