//! Grid report emission: a machine-readable JSON document and an aligned
//! plain-text table, both with deterministic field ordering and no
//! timestamps, so identical runs produce byte-identical files.
//!
//! Hit ratios print with three decimals; MSE values print multiplied by
//! 10⁵ (so 4.781e-5 renders as "4.781"). Aggregate rows report the mean ±
//! population standard deviation over a variant's scaling cells.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

use fusecast_core::eval::EvalReport;

use crate::config::ExperimentConfig;
use crate::grid::{BaselineReports, CellResult, GridRun};

/// Scale factor applied to MSE values for display.
const MSE_DISPLAY_SCALE: f64 = 1e5;

/// Hit ratio and error of one prediction series, without the per-day flag
/// vector (which belongs in memory, not in a summary file).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Metric {
    pub hit_ratio: f64,
    pub mse: f64,
    pub n_days: usize,
}

impl From<&EvalReport> for Metric {
    fn from(report: &EvalReport) -> Self {
        Self {
            hit_ratio: report.hit_ratio,
            mse: report.mse,
            n_days: report.n_days,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BaselineSummary {
    pub momentum_domestic: Metric,
    pub momentum_foreign: Metric,
    pub buy_hold: Metric,
}

impl From<&BaselineReports> for BaselineSummary {
    fn from(b: &BaselineReports) -> Self {
        Self {
            momentum_domestic: Metric::from(&b.momentum_domestic),
            momentum_foreign: Metric::from(&b.momentum_foreign),
            buy_hold: Metric::from(&b.buy_hold),
        }
    }
}

/// One (scaling, variant) cell within a window.
#[derive(Debug, Clone, Serialize)]
pub struct CellEntry {
    pub scaling: String,
    pub metric: Option<Metric>,
    pub best_config: Option<serde_json::Map<String, serde_json::Value>>,
    pub best_val_mse: Option<f64>,
    pub completed_trials: Option<usize>,
    pub error: Option<String>,
}

impl CellEntry {
    fn from_outcome(scaling: (f64, f64), outcome: &Result<CellResult, String>) -> Self {
        match outcome {
            Ok(cell) => Self {
                scaling: scaling_label(scaling),
                metric: Some(Metric::from(&cell.report)),
                best_config: Some(cell.best_config.clone()),
                best_val_mse: Some(cell.best_val_mse),
                completed_trials: Some(cell.completed_trials),
                error: None,
            },
            Err(e) => Self {
                scaling: scaling_label(scaling),
                metric: None,
                best_config: None,
                best_val_mse: None,
                completed_trials: None,
                error: Some(e.clone()),
            },
        }
    }
}

/// Mean ± population SD over the completed scaling cells of one variant.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Aggregate {
    pub hit_mean: f64,
    pub hit_sd: f64,
    pub mse_mean: f64,
    pub mse_sd: f64,
    pub n_cells: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantReport {
    pub variant: String,
    pub cells: Vec<CellEntry>,
    /// Absent when no cell of the variant completed.
    pub aggregate: Option<Aggregate>,
}

#[derive(Debug, Clone, Serialize)]
pub struct WindowReport {
    pub window: String,
    pub baselines: Option<BaselineSummary>,
    pub error: Option<String>,
    pub variants: Vec<VariantReport>,
}

/// The whole grid, shaped for serialization.
#[derive(Debug, Clone, Serialize)]
pub struct GridReport {
    pub seed: u64,
    pub tpe_trials: usize,
    pub windows: Vec<WindowReport>,
}

fn scaling_label(range: (f64, f64)) -> String {
    format!("[{},{}]", range.0, range.1)
}

/// Population standard deviation (divisor n, not n-1): the cells are the
/// whole set being summarized, not a sample from a larger one.
fn mean_and_population_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn aggregate(cells: &[CellEntry]) -> Option<Aggregate> {
    let metrics: Vec<&Metric> = cells.iter().filter_map(|c| c.metric.as_ref()).collect();
    if metrics.is_empty() {
        return None;
    }
    let hits: Vec<f64> = metrics.iter().map(|m| m.hit_ratio).collect();
    let mses: Vec<f64> = metrics.iter().map(|m| m.mse).collect();
    let (hit_mean, hit_sd) = mean_and_population_sd(&hits);
    let (mse_mean, mse_sd) = mean_and_population_sd(&mses);
    Some(Aggregate {
        hit_mean,
        hit_sd,
        mse_mean,
        mse_sd,
        n_cells: metrics.len(),
    })
}

/// Reshapes a finished run into the report structure: cells regrouped by
/// (window, variant), one entry per scaling range, aggregates attached.
pub fn build_report(run: &GridRun, cfg: &ExperimentConfig) -> GridReport {
    let n_scalings = cfg.scalings.len();
    let n_variants = cfg.variants.len();
    let windows = run
        .windows
        .iter()
        .enumerate()
        .map(|(w_idx, (window, baselines))| {
            let variants = (0..n_variants)
                .map(|v_idx| {
                    let cells: Vec<CellEntry> = (0..n_scalings)
                        .map(|s_idx| {
                            let flat = (w_idx * n_scalings + s_idx) * n_variants + v_idx;
                            let (key, outcome) = &run.cells[flat];
                            debug_assert_eq!(
                                (key.window, key.scaling, key.variant),
                                (w_idx, s_idx, v_idx)
                            );
                            CellEntry::from_outcome(cfg.scalings[s_idx], outcome)
                        })
                        .collect();
                    VariantReport {
                        variant: cfg.variants[v_idx].to_string(),
                        aggregate: aggregate(&cells),
                        cells,
                    }
                })
                .collect();
            WindowReport {
                window: window.label(),
                baselines: baselines.as_ref().ok().map(BaselineSummary::from),
                error: baselines.as_ref().err().cloned(),
                variants,
            }
        })
        .collect();
    GridReport {
        seed: cfg.seed,
        tpe_trials: cfg.tpe_trials,
        windows,
    }
}

fn fmt_hit(hit: f64) -> String {
    format!("{hit:.3}")
}

fn fmt_mse(mse: f64) -> String {
    format!("{:.3}", mse * MSE_DISPLAY_SCALE)
}

/// Renders the aligned-text table. Infallible by construction: writing to
/// a `String` cannot fail.
pub fn render_text(report: &GridReport) -> String {
    let mut out = String::new();
    let w = |s: &str| format!("{s:<18}");
    writeln!(out, "fusecast grid report").unwrap();
    writeln!(
        out,
        "seed {}, {} TPE trials per cell",
        report.seed, report.tpe_trials
    )
    .unwrap();
    for window in &report.windows {
        writeln!(out).unwrap();
        writeln!(out, "window {}", window.window).unwrap();
        if let Some(error) = &window.error {
            writeln!(out, "  failed: {error}").unwrap();
            continue;
        }
        if let Some(b) = &window.baselines {
            writeln!(
                out,
                "  test days {}, baselines: momentum_domestic {}  momentum_foreign {}  buy_hold {}",
                b.buy_hold.n_days,
                fmt_hit(b.momentum_domestic.hit_ratio),
                fmt_hit(b.momentum_foreign.hit_ratio),
                fmt_hit(b.buy_hold.hit_ratio),
            )
            .unwrap();
        }
        writeln!(
            out,
            "  {}{}{:>16}{:>20}",
            w("variant"),
            w("scaling"),
            "hit ratio",
            "mse(x1e-5)"
        )
        .unwrap();
        for variant in &window.variants {
            for cell in &variant.cells {
                match (&cell.metric, &cell.error) {
                    (Some(m), _) => writeln!(
                        out,
                        "  {}{}{:>16}{:>20}",
                        w(&variant.variant),
                        w(&cell.scaling),
                        fmt_hit(m.hit_ratio),
                        fmt_mse(m.mse),
                    )
                    .unwrap(),
                    (None, Some(error)) => writeln!(
                        out,
                        "  {}{}failed: {error}",
                        w(&variant.variant),
                        w(&cell.scaling),
                    )
                    .unwrap(),
                    (None, None) => unreachable!("cell entry with neither metric nor error"),
                }
            }
            match &variant.aggregate {
                Some(agg) => writeln!(
                    out,
                    "  {}{}{:>16}{:>20}",
                    w(&variant.variant),
                    w("mean+/-sd"),
                    format!("{}+/-{}", fmt_hit(agg.hit_mean), fmt_hit(agg.hit_sd)),
                    format!("{}+/-{}", fmt_mse(agg.mse_mean), fmt_mse(agg.mse_sd)),
                )
                .unwrap(),
                None => writeln!(
                    out,
                    "  {}{}no completed cells",
                    w(&variant.variant),
                    w("mean+/-sd"),
                )
                .unwrap(),
            }
        }
    }
    out
}

/// Writes `report.json` and `report.txt` under `out_dir`, creating it if
/// needed, and returns both paths.
pub fn emit_report(
    run: &GridRun,
    cfg: &ExperimentConfig,
    out_dir: &Path,
) -> io::Result<(PathBuf, PathBuf)> {
    let report = build_report(run, cfg);
    fs::create_dir_all(out_dir)?;
    let json_path = out_dir.join("report.json");
    let txt_path = out_dir.join("report.txt");
    let mut json = serde_json::to_string_pretty(&report).map_err(io::Error::other)?;
    json.push('\n');
    fs::write(&json_path, json)?;
    fs::write(&txt_path, render_text(&report))?;
    Ok((json_path, txt_path))
}
