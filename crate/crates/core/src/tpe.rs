//! Tree-structured Parzen estimator over flat categorical search spaces.
//!
//! Every dimension here is a small finite set (layer counts, unit widths,
//! optimizer names, …), so both densities are smoothed categorical
//! distributions rather than kernel estimates. After `n_startup` uniform
//! trials, the history is split at the γ-quantile of validation loss into a
//! "good" and a "bad" set; each suggestion draws `n_candidates` configs from
//! the good density l(x) and keeps the one maximizing l(x)/g(x).
//!
//! Failed trials (non-finite loss) stay in the history — they count toward
//! the budget and appear in exports — but never enter either density.

use std::fmt;
use std::io::Write;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Quantile separating good trials from bad ones.
pub const DEFAULT_GAMMA: f64 = 0.25;
/// Uniform random trials before the density model switches on.
pub const DEFAULT_N_STARTUP: usize = 10;
/// Candidates drawn from the good density per suggestion.
pub const DEFAULT_N_CANDIDATES: usize = 24;
/// Default search budget per optimization run.
pub const DEFAULT_MAX_TRIALS: usize = 50;

#[derive(Debug, Error)]
pub enum TpeError {
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
    #[error("good/bad split needs at least 2 completed trials, got {0}")]
    TooFewTrials(usize),
    #[error("observation {value} is outside the domain of dimension `{dimension}`")]
    OutsideDomain { dimension: String, value: String },
    #[error("all {0} trials failed; no completed trial to return")]
    AllTrialsFailed(usize),
}

/// One categorical choice: hyperparameter domains mix integers, rates, and
/// names, so values are a small closed enum rather than strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HyperValue {
    Int(u64),
    Float(f64),
    Name(String),
}

impl HyperValue {
    pub fn name(s: &str) -> Self {
        Self::Name(s.to_string())
    }

    pub fn as_u64(&self) -> Option<u64> {
        match self {
            Self::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Self::Int(v) => Some(*v as f64),
            Self::Float(v) => Some(*v),
            Self::Name(_) => None,
        }
    }

    pub fn as_name(&self) -> Option<&str> {
        match self {
            Self::Name(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for HyperValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Int(v) => write!(f, "{v}"),
            Self::Float(v) => write!(f, "{v}"),
            Self::Name(s) => write!(f, "{s}"),
        }
    }
}

/// A named categorical dimension. Singletons are legal and simply pass
/// their only choice through every suggestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    name: String,
    choices: Vec<HyperValue>,
}

impl Dimension {
    pub fn new(name: &str, choices: Vec<HyperValue>) -> Result<Self, TpeError> {
        if choices.is_empty() {
            return Err(TpeError::InvalidSpace(format!(
                "dimension `{name}` has no choices"
            )));
        }
        Ok(Self {
            name: name.to_string(),
            choices,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn choices(&self) -> &[HyperValue] {
        &self.choices
    }

    fn index_of(&self, value: &HyperValue) -> Result<usize, TpeError> {
        self.choices
            .iter()
            .position(|c| c == value)
            .ok_or_else(|| TpeError::OutsideDomain {
                dimension: self.name.clone(),
                value: value.to_string(),
            })
    }
}

/// The full (flat) domain: an ordered list of named categorical dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    dimensions: Vec<Dimension>,
}

impl SearchSpace {
    pub fn new(dimensions: Vec<Dimension>) -> Result<Self, TpeError> {
        if dimensions.is_empty() {
            return Err(TpeError::InvalidSpace("no dimensions".into()));
        }
        for (i, dim) in dimensions.iter().enumerate() {
            if dimensions[..i].iter().any(|d| d.name == dim.name) {
                return Err(TpeError::InvalidSpace(format!(
                    "duplicate dimension name `{}`",
                    dim.name
                )));
            }
        }
        Ok(Self { dimensions })
    }

    /// The standard forecaster-tuning space: network depth and width,
    /// dropout rate, batch size, optimizer, activation, plus singleton
    /// learning-rate and epoch-cap dimensions.
    pub fn standard() -> Self {
        use HyperValue::{Float, Int};
        let dims = vec![
            ("hidden_layers", vec![Int(2), Int(3)]),
            ("hidden_units", vec![Int(2), Int(4), Int(8), Int(16)]),
            ("dropout", vec![Float(0.25), Float(0.5), Float(0.75)]),
            ("batch_size", vec![Int(32), Int(64), Int(128)]),
            (
                "optimizer",
                ["rmsprop", "adam", "sgd"].map(HyperValue::name).to_vec(),
            ),
            (
                "activation",
                ["tanh", "relu", "sigmoid"].map(HyperValue::name).to_vec(),
            ),
            ("learning_rate", vec![Float(0.001)]),
            ("epochs", vec![Int(100)]),
        ];
        Self::new(
            dims.into_iter()
                .map(|(name, choices)| Dimension::new(name, choices).expect("non-empty"))
                .collect(),
        )
        .expect("standard space is valid")
    }

    pub fn dimensions(&self) -> &[Dimension] {
        &self.dimensions
    }

    pub fn dimension(&self, name: &str) -> Option<&Dimension> {
        self.dimensions.iter().find(|d| d.name == name)
    }

    fn dimension_index(&self, name: &str) -> Option<usize> {
        self.dimensions.iter().position(|d| d.name == name)
    }
}

/// One sampled point: a choice per dimension, in the space's order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    values: Vec<HyperValue>,
}

impl TrialConfig {
    pub fn new(space: &SearchSpace, values: Vec<HyperValue>) -> Result<Self, TpeError> {
        if values.len() != space.dimensions.len() {
            return Err(TpeError::InvalidSpace(format!(
                "config has {} values for {} dimensions",
                values.len(),
                space.dimensions.len()
            )));
        }
        for (dim, value) in space.dimensions.iter().zip(&values) {
            dim.index_of(value)?;
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[HyperValue] {
        &self.values
    }

    /// Looks a value up by dimension name.
    pub fn value(&self, space: &SearchSpace, name: &str) -> Option<&HyperValue> {
        space.dimension_index(name).map(|i| &self.values[i])
    }
}

/// How a trial ended: a finite validation MSE, or a failure (non-finite
/// loss or a training error), which stays in the history but outside the
/// density model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "val_mse", rename_all = "lowercase")]
pub enum TrialOutcome {
    Completed(f64),
    Failed,
}

impl TrialOutcome {
    pub fn loss(&self) -> Option<f64> {
        match self {
            Self::Completed(l) => Some(*l),
            Self::Failed => None,
        }
    }

    pub fn is_completed(&self) -> bool {
        matches!(self, Self::Completed(_))
    }
}

impl fmt::Display for TrialOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Completed(_) => write!(f, "completed"),
            Self::Failed => write!(f, "failed"),
        }
    }
}

/// One evaluated configuration in the history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub id: usize,
    pub config: TrialConfig,
    pub outcome: TrialOutcome,
}

/// Knobs of the optimizer itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TpeConfig {
    pub gamma: f64,
    pub n_startup: usize,
    pub n_candidates: usize,
    pub max_trials: usize,
    pub seed: u64,
}

impl TpeConfig {
    /// Standard constants (γ=0.25, 10 startup trials, 24 candidates) with
    /// the given budget and seed.
    pub fn new(max_trials: usize, seed: u64) -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            n_startup: DEFAULT_N_STARTUP,
            n_candidates: DEFAULT_N_CANDIDATES,
            max_trials,
            seed,
        }
    }

    pub fn check(&self) -> Result<(), TpeError> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(TpeError::InvalidConfig(format!(
                "gamma {} must lie in (0, 1)",
                self.gamma
            )));
        }
        if self.n_startup == 0 {
            return Err(TpeError::InvalidConfig("n_startup must be >= 1".into()));
        }
        if self.n_candidates == 0 {
            return Err(TpeError::InvalidConfig("n_candidates must be >= 1".into()));
        }
        if self.max_trials == 0 {
            return Err(TpeError::InvalidConfig("max_trials must be >= 1".into()));
        }
        Ok(())
    }
}

/// Splits the completed trials into the `ceil(γ·n)` lowest-loss ("good")
/// and the rest ("bad"). Equal losses rank by earlier trial id.
pub fn split_good_bad<'a>(
    trials: &'a [Trial],
    gamma: f64,
) -> Result<(Vec<&'a Trial>, Vec<&'a Trial>), TpeError> {
    let mut completed: Vec<&Trial> = trials.iter().filter(|t| t.outcome.is_completed()).collect();
    if completed.len() < 2 {
        return Err(TpeError::TooFewTrials(completed.len()));
    }
    completed.sort_by(|a, b| {
        let (la, lb) = (a.outcome.loss().unwrap(), b.outcome.loss().unwrap());
        la.total_cmp(&lb).then(a.id.cmp(&b.id))
    });
    let n_good = (gamma * completed.len() as f64).ceil() as usize;
    let bad = completed.split_off(n_good);
    Ok((completed, bad))
}

/// Laplace-smoothed categorical weights for one dimension: choice `c` gets
/// probability `(count(c) + 1) / (n + k)` where `k` is the domain size, so
/// every choice keeps positive mass even with zero observations.
pub fn parzen_categorical_weights(
    observations: &[HyperValue],
    dimension: &Dimension,
) -> Result<Vec<f64>, TpeError> {
    let k = dimension.choices.len();
    let mut counts = vec![0usize; k];
    for obs in observations {
        counts[dimension.index_of(obs)?] += 1;
    }
    let denom = (observations.len() + k) as f64;
    Ok(counts.iter().map(|&c| (c + 1) as f64 / denom).collect())
}

/// Per-dimension weight table for one group (good or bad) of trials.
fn group_weights(
    group: &[&Trial],
    space: &SearchSpace,
    dim_index: usize,
) -> Result<Vec<f64>, TpeError> {
    let observations: Vec<HyperValue> = group
        .iter()
        .map(|t| t.config.values[dim_index].clone())
        .collect();
    parzen_categorical_weights(&observations, &space.dimensions[dim_index])
}

fn sample_uniform<R: Rng>(space: &SearchSpace, rng: &mut R) -> TrialConfig {
    TrialConfig {
        values: space
            .dimensions
            .iter()
            .map(|d| d.choices.choose(rng).expect("non-empty domain").clone())
            .collect(),
    }
}

/// Proposes the next configuration. Below `n_startup` completed trials (or
/// too few for a split) the draw is uniform; afterwards, `n_candidates`
/// configs are sampled from the good density and the one maximizing
/// l(x)/g(x) wins. Never fails: degenerate histories fall back to uniform.
pub fn suggest<R: Rng>(
    history: &[Trial],
    space: &SearchSpace,
    cfg: &TpeConfig,
    rng: &mut R,
) -> TrialConfig {
    let completed = history.iter().filter(|t| t.outcome.is_completed()).count();
    if completed < cfg.n_startup.max(2) {
        return sample_uniform(space, rng);
    }
    let (good, bad) = split_good_bad(history, cfg.gamma).expect("completed >= 2 checked above");
    let n_dims = space.dimensions.len();
    let mut good_weights = Vec::with_capacity(n_dims);
    let mut bad_weights = Vec::with_capacity(n_dims);
    for i in 0..n_dims {
        good_weights.push(group_weights(&good, space, i).expect("history configs are in-domain"));
        bad_weights.push(group_weights(&bad, space, i).expect("history configs are in-domain"));
    }
    let samplers: Vec<WeightedIndex<f64>> = good_weights
        .iter()
        .map(|w| WeightedIndex::new(w).expect("smoothed weights are positive"))
        .collect();

    let mut best: Option<(f64, TrialConfig)> = None;
    for _ in 0..cfg.n_candidates {
        let indices: Vec<usize> = samplers.iter().map(|s| s.sample(rng)).collect();
        let score: f64 = indices
            .iter()
            .enumerate()
            .map(|(dim, &idx)| good_weights[dim][idx] / bad_weights[dim][idx])
            .product();
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            let values = indices
                .iter()
                .enumerate()
                .map(|(dim, &idx)| space.dimensions[dim].choices[idx].clone())
                .collect();
            best = Some((score, TrialConfig { values }));
        }
    }
    best.expect("n_candidates >= 1").1
}

/// Runs `max_trials` suggest→evaluate→record cycles and returns the lowest-
/// loss completed trial (earliest wins ties) plus the full history. The
/// objective reports failure by returning a non-finite loss.
pub fn optimize<F, R>(
    mut objective: F,
    space: &SearchSpace,
    cfg: &TpeConfig,
    rng: &mut R,
) -> Result<(Trial, Vec<Trial>), TpeError>
where
    F: FnMut(&TrialConfig) -> f64,
    R: Rng,
{
    cfg.check()?;
    let mut history: Vec<Trial> = Vec::with_capacity(cfg.max_trials);
    for id in 0..cfg.max_trials {
        let config = suggest(&history, space, cfg, rng);
        let loss = objective(&config);
        let outcome = if loss.is_finite() {
            TrialOutcome::Completed(loss)
        } else {
            TrialOutcome::Failed
        };
        history.push(Trial {
            id,
            config,
            outcome,
        });
    }
    let best = history
        .iter()
        .filter(|t| t.outcome.is_completed())
        .min_by(|a, b| {
            a.outcome
                .loss()
                .unwrap()
                .total_cmp(&b.outcome.loss().unwrap())
                .then(a.id.cmp(&b.id))
        })
        .cloned()
        .ok_or(TpeError::AllTrialsFailed(cfg.max_trials))?;
    Ok((best, history))
}

/// Writes the history as `trial_id,<one column per dimension>,val_mse,status`.
/// Failed trials print `NaN` in the loss column.
pub fn write_trials_csv(
    space: &SearchSpace,
    trials: &[Trial],
    mut out: impl Write,
) -> std::io::Result<()> {
    write!(out, "trial_id")?;
    for dim in &space.dimensions {
        write!(out, ",{}", dim.name)?;
    }
    writeln!(out, ",val_mse,status")?;
    for trial in trials {
        write!(out, "{}", trial.id)?;
        for value in &trial.config.values {
            write!(out, ",{value}")?;
        }
        match trial.outcome {
            TrialOutcome::Completed(loss) => writeln!(out, ",{loss},completed")?,
            TrialOutcome::Failed => writeln!(out, ",NaN,failed")?,
        }
    }
    Ok(())
}
