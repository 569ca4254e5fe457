//! Directional hit ratio, squared-error reporting, the three rule
//! baselines, and scatter regression with bootstrapped confidence bands.
//!
//! Everything here is unit-agnostic: callers denormalize model outputs back
//! into return space *before* scoring, so the MSE figures carry
//! squared-return units. A day counts as a directional hit only when the
//! product of predicted and realized return is strictly positive — a
//! realized return of exactly zero can never score.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bootstrap resample count used by the scatter exports.
pub const DEFAULT_N_BOOT: usize = 1000;
/// Two-sided confidence level for slope intervals.
pub const DEFAULT_CI_LEVEL: f64 = 0.95;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {predictions} predictions vs {actuals} actuals")]
    LengthMismatch { predictions: usize, actuals: usize },
    #[error("need at least {needed} observations, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("x is constant; the regression slope is undefined")]
    ConstantX,
    #[error("confidence level {0} must lie in (0, 1)")]
    BadLevel(f64),
    #[error("bootstrap needs at least 1 resample")]
    ZeroResamples,
}

/// Directional and squared-error scores for one evaluation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Fraction of days whose direction was called correctly.
    pub hit_ratio: f64,
    /// Mean squared error in squared-return units.
    pub mse: f64,
    pub n_days: usize,
    /// Per-day directional flags P_t; `hit_ratio` is their mean.
    pub flags: Vec<bool>,
}

impl EvalReport {
    /// Scores `predictions` against `actuals` (both in return space).
    pub fn from_predictions(predictions: &[f64], actuals: &[f64]) -> Result<Self, EvalError> {
        let flags = directional_flags(predictions, actuals)?;
        let hits = flags.iter().filter(|&&f| f).count();
        Ok(Self {
            hit_ratio: hits as f64 / flags.len() as f64,
            mse: mse_report(predictions, actuals)?,
            n_days: flags.len(),
            flags,
        })
    }
}

fn check_pair(predictions: &[f64], actuals: &[f64]) -> Result<(), EvalError> {
    if predictions.len() != actuals.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            actuals: actuals.len(),
        });
    }
    if predictions.is_empty() {
        return Err(EvalError::TooShort { needed: 1, got: 0 });
    }
    Ok(())
}

/// Per-day directional flags: P_t = 1 iff predicted and realized return
/// share a strict sign (their product is positive). Zeros on either side
/// score 0.
pub fn directional_flags(predictions: &[f64], actuals: &[f64]) -> Result<Vec<bool>, EvalError> {
    check_pair(predictions, actuals)?;
    Ok(predictions
        .iter()
        .zip(actuals)
        .map(|(&p, &a)| (p > 0.0 && a > 0.0) || (p < 0.0 && a < 0.0))
        .collect())
}

/// Mean of the directional flags.
pub fn hit_ratio(predictions: &[f64], actuals: &[f64]) -> Result<f64, EvalError> {
    let flags = directional_flags(predictions, actuals)?;
    Ok(flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64)
}

/// Mean squared error, with error handling instead of the training loop's
/// asserts (inputs here come from files and CLI flags).
pub fn mse_report(predictions: &[f64], actuals: &[f64]) -> Result<f64, EvalError> {
    check_pair(predictions, actuals)?;
    let sum: f64 = predictions
        .iter()
        .zip(actuals)
        .map(|(&p, &a)| (p - a) * (p - a))
        .sum();
    Ok(sum / predictions.len() as f64)
}

/// Domestic momentum rule: tomorrow repeats today's direction. Day t's
/// return is the signal for day t+1, so `returns` must hold at least two
/// days and n−1 days are scored.
pub fn baseline_momentum_domestic(returns: &[f64]) -> Result<EvalReport, EvalError> {
    if returns.len() < 2 {
        return Err(EvalError::TooShort {
            needed: 2,
            got: returns.len(),
        });
    }
    EvalReport::from_predictions(&returns[..returns.len() - 1], &returns[1..])
}

/// Foreign momentum rule: the domestic market follows yesterday's foreign
/// direction. `foreign_today[i]` is the foreign close-to-close return whose
/// sign predicts `domestic_next[i]`, the domestic return of the following
/// trading day — the caller aligns the one-day offset.
pub fn baseline_momentum_foreign(
    foreign_today: &[f64],
    domestic_next: &[f64],
) -> Result<EvalReport, EvalError> {
    EvalReport::from_predictions(foreign_today, domestic_next)
}

/// Buy-and-hold rule: always predict a rise, so the hit ratio is the
/// fraction of strictly positive returns.
pub fn baseline_buy_hold(returns: &[f64]) -> Result<EvalReport, EvalError> {
    let ones = vec![1.0; returns.len()];
    EvalReport::from_predictions(&ones, returns)
}

/// Least-squares line for one scatter panel, with an optional bootstrap
/// interval for the slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub beta0: f64,
    pub beta1: f64,
    /// 95% (or caller-chosen level) percentile-bootstrap bounds for
    /// `beta1`; `None` for a plain point fit.
    pub ci: Option<(f64, f64)>,
    /// Resamples behind `ci` (0 for a point fit).
    pub n_boot: usize,
}

impl RegressionFit {
    /// True when the interval carries no width (e.g. a single resample):
    /// such fits are flagged in exported reports.
    pub fn is_degenerate(&self) -> bool {
        matches!(self.ci, Some((lo, hi)) if lo == hi)
    }
}

fn slope_intercept(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let var: f64 = x.iter().map(|&v| (v - mx) * (v - mx)).sum();
    let cov: f64 = x.iter().zip(y).map(|(&xv, &yv)| (xv - mx) * (yv - my)).sum();
    let beta1 = cov / var;
    (my - beta1 * mx, beta1)
}

fn is_constant(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[0] == w[1])
}

/// Ordinary least squares: β1 = cov(x,y)/var(x), β0 = ȳ − β1·x̄.
pub fn ols_fit(x: &[f64], y: &[f64]) -> Result<RegressionFit, EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::LengthMismatch {
            predictions: x.len(),
            actuals: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(EvalError::TooShort {
            needed: 2,
            got: x.len(),
        });
    }
    if is_constant(x) {
        return Err(EvalError::ConstantX);
    }
    let (beta0, beta1) = slope_intercept(x, y);
    Ok(RegressionFit {
        beta0,
        beta1,
        ci: None,
        n_boot: 0,
    })
}

/// Linear-interpolation quantile of a sorted sample.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Percentile interval for the regression slope from a pairs bootstrap:
/// resample (x_i, y_i) rows with replacement `n_boot` times and take the
/// (1−level)/2 and 1−(1−level)/2 quantiles of the refitted slopes.
/// Resamples whose x column comes out constant are redrawn.
pub fn bootstrap_ci<R: Rng>(
    x: &[f64],
    y: &[f64],
    n_boot: usize,
    level: f64,
    rng: &mut R,
) -> Result<(f64, f64), EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::LengthMismatch {
            predictions: x.len(),
            actuals: y.len(),
        });
    }
    if x.len() < 3 {
        return Err(EvalError::TooShort {
            needed: 3,
            got: x.len(),
        });
    }
    if is_constant(x) {
        return Err(EvalError::ConstantX);
    }
    if n_boot == 0 {
        return Err(EvalError::ZeroResamples);
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(EvalError::BadLevel(level));
    }
    let n = x.len();
    let mut slopes = Vec::with_capacity(n_boot);
    let mut xs = vec![0.0; n];
    let mut ys = vec![0.0; n];
    for _ in 0..n_boot {
        loop {
            for i in 0..n {
                let j = rng.gen_range(0..n);
                xs[i] = x[j];
                ys[i] = y[j];
            }
            if !is_constant(&xs) {
                break;
            }
        }
        slopes.push(slope_intercept(&xs, &ys).1);
    }
    slopes.sort_by(f64::total_cmp);
    let alpha = 1.0 - level;
    Ok((
        percentile(&slopes, alpha / 2.0),
        percentile(&slopes, 1.0 - alpha / 2.0),
    ))
}

/// Point fit plus bootstrap interval in one call, seeded for reproducible
/// exports.
pub fn fit_with_ci(
    x: &[f64],
    y: &[f64],
    n_boot: usize,
    level: f64,
    seed: u64,
) -> Result<RegressionFit, EvalError> {
    let mut fit = ols_fit(x, y)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    fit.ci = Some(bootstrap_ci(x, y, n_boot, level, &mut rng)?);
    fit.n_boot = n_boot;
    Ok(fit)
}
