//! Plain-text experiment configuration.
//!
//! The format is one `key = value` pair per line with dotted section names
//! (`synth.n_days = 3000`); `#` starts a comment. Parsing is fail-fast:
//! unknown keys, duplicate keys, and malformed values are all errors, so a
//! typo cannot silently fall back to a default.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use thiserror::Error;

use fusecast_core::fusion::{Modality, Variant, DEFAULT_LAMBDA};
use fusecast_core::synth::SynthConfig;
use fusecast_core::tpe::DEFAULT_MAX_TRIALS;

/// The three default experiment windows.
pub const DEFAULT_WINDOWS: [(&str, &str); 3] = [
    ("2006-01-01", "2017-12-31"),
    ("2010-01-01", "2017-12-31"),
    ("2014-01-01", "2017-12-31"),
];

/// The three default min-max target ranges.
pub const DEFAULT_SCALINGS: [(f64, f64); 3] = [(-1.0, 1.0), (0.0, 1.0), (-0.5, 0.5)];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config line {line}: expected `key = value`, got `{text}`")]
    Malformed { line: usize, text: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("duplicate config key `{0}`")]
    DuplicateKey(String),
    #[error("key `{key}`: cannot parse `{value}` as {expected}")]
    BadValue {
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("no data source: set data.synthetic = true or both data.domestic and data.foreign")]
    NoDataSource,
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Where the market bars come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Files { domestic: PathBuf, foreign: PathBuf },
    Synthetic(SynthConfig),
}

/// One inclusive date window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl Window {
    pub fn label(&self) -> String {
        format!("{}..{}", self.start, self.end)
    }
}

/// Fully resolved experiment parameters: config file plus CLI overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub windows: Vec<Window>,
    pub scalings: Vec<(f64, f64)>,
    pub variants: Vec<Variant>,
    pub tpe_trials: usize,
    pub seed: u64,
    pub jobs: usize,
    /// Variant tuned by the `tune` verb.
    pub tune_variant: Variant,
}

const KNOWN_KEYS: &[&str] = &[
    "data.domestic",
    "data.foreign",
    "data.synthetic",
    "synth.n_days",
    "synth.coupling",
    "synth.noise_sd",
    "synth.domestic_sd",
    "synth.foreign_sd",
    "synth.shape_sd",
    "synth.seed",
    "windows",
    "scaling",
    "variants",
    "tpe.trials",
    "tune.variant",
    "seed",
    "jobs",
];

/// Raw `key = value` pairs in file order.
fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line = raw_line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Malformed {
            line: idx + 1,
            text: raw_line.trim().to_string(),
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey(key));
        }
        if pairs.iter().any(|(k, _)| *k == key) {
            return Err(ConfigError::DuplicateKey(key));
        }
        pairs.push((key, value));
    }
    Ok(pairs)
}

struct Pairs(Vec<(String, String)>);

impl Pairs {
    fn get(&self, key: &str) -> Option<&str> {
        self.0
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn parse<T: FromStr>(&self, key: &str, expected: &'static str) -> Result<Option<T>, ConfigError> {
        self.get(key)
            .map(|v| {
                v.parse::<T>().map_err(|_| ConfigError::BadValue {
                    key: key.to_string(),
                    value: v.to_string(),
                    expected,
                })
            })
            .transpose()
    }
}

fn parse_window(text: &str) -> Result<Window, ConfigError> {
    let bad = || ConfigError::BadValue {
        key: "windows".into(),
        value: text.to_string(),
        expected: "YYYY-MM-DD..YYYY-MM-DD",
    };
    let (start, end) = text.split_once("..").ok_or_else(bad)?;
    let start = NaiveDate::parse_from_str(start.trim(), "%Y-%m-%d").map_err(|_| bad())?;
    let end = NaiveDate::parse_from_str(end.trim(), "%Y-%m-%d").map_err(|_| bad())?;
    if start >= end {
        return Err(ConfigError::Invalid(format!(
            "window {start}..{end} must have start < end"
        )));
    }
    Ok(Window { start, end })
}

fn parse_scaling(text: &str) -> Result<(f64, f64), ConfigError> {
    let bad = || ConfigError::BadValue {
        key: "scaling".into(),
        value: text.to_string(),
        expected: "lo:hi",
    };
    let (lo, hi) = text.split_once(':').ok_or_else(bad)?;
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(ConfigError::Invalid(format!(
            "scaling range {lo}:{hi} must have lo < hi"
        )));
    }
    Ok((lo, hi))
}

fn split_list(text: &str) -> impl Iterator<Item = &str> {
    text.split(',').map(str::trim).filter(|s| !s.is_empty())
}

impl ExperimentConfig {
    /// Parses a config file; an absent path yields pure defaults (which
    /// still require a data source unless the caller is generating one).
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_str(&text)
    }

    pub fn from_str(text: &str) -> Result<Self, ConfigError> {
        let pairs = Pairs(parse_pairs(text)?);

        let seed: u64 = pairs.parse("seed", "unsigned integer")?.unwrap_or(0);

        let synthetic: bool = pairs.parse("data.synthetic", "true/false")?.unwrap_or(false);
        let source = if synthetic {
            let mut synth = SynthConfig {
                // Synthetic data follows the experiment seed unless pinned.
                seed,
                ..SynthConfig::default()
            };
            if let Some(v) = pairs.parse("synth.n_days", "unsigned integer")? {
                synth.n_days = v;
            }
            if let Some(v) = pairs.parse("synth.coupling", "number")? {
                synth.coupling = v;
            }
            if let Some(v) = pairs.parse("synth.noise_sd", "number")? {
                synth.noise_sd = v;
            }
            if let Some(v) = pairs.parse("synth.domestic_sd", "number")? {
                synth.domestic_sd = v;
            }
            if let Some(v) = pairs.parse("synth.foreign_sd", "number")? {
                synth.foreign_sd = v;
            }
            if let Some(v) = pairs.parse("synth.shape_sd", "number")? {
                synth.shape_sd = v;
            }
            if let Some(v) = pairs.parse("synth.seed", "unsigned integer")? {
                synth.seed = v;
            }
            synth
                .validate()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
            DataSource::Synthetic(synth)
        } else {
            match (pairs.get("data.domestic"), pairs.get("data.foreign")) {
                (Some(dom), Some(for_)) => DataSource::Files {
                    domestic: PathBuf::from(dom),
                    foreign: PathBuf::from(for_),
                },
                _ => return Err(ConfigError::NoDataSource),
            }
        };

        let windows = match pairs.get("windows") {
            Some(text) => split_list(text).map(parse_window).collect::<Result<Vec<_>, _>>()?,
            None => DEFAULT_WINDOWS
                .iter()
                .map(|(s, e)| Window {
                    start: NaiveDate::parse_from_str(s, "%Y-%m-%d").expect("default date"),
                    end: NaiveDate::parse_from_str(e, "%Y-%m-%d").expect("default date"),
                })
                .collect(),
        };
        if windows.is_empty() {
            return Err(ConfigError::Invalid("windows list is empty".into()));
        }

        let scalings = match pairs.get("scaling") {
            Some(text) => split_list(text)
                .map(parse_scaling)
                .collect::<Result<Vec<_>, _>>()?,
            None => DEFAULT_SCALINGS.to_vec(),
        };
        if scalings.is_empty() {
            return Err(ConfigError::Invalid("scaling list is empty".into()));
        }

        let parse_variant = |text: &str| {
            Variant::from_str(text).map_err(|_| ConfigError::BadValue {
                key: "variants".into(),
                value: text.to_string(),
                expected: "single_domestic|single_foreign|early|intermediate|late",
            })
        };
        let variants = match pairs.get("variants") {
            Some(text) => split_list(text)
                .map(parse_variant)
                .collect::<Result<Vec<_>, _>>()?,
            None => vec![
                Variant::SingleModal {
                    modality: Modality::Domestic,
                },
                Variant::SingleModal {
                    modality: Modality::Foreign,
                },
                Variant::EarlyFusion,
                Variant::IntermediateFusion,
                Variant::LateFusion {
                    lambda: DEFAULT_LAMBDA,
                },
            ],
        };
        if variants.is_empty() {
            return Err(ConfigError::Invalid("variants list is empty".into()));
        }

        let tpe_trials = pairs
            .parse("tpe.trials", "unsigned integer")?
            .unwrap_or(DEFAULT_MAX_TRIALS);
        if tpe_trials == 0 {
            return Err(ConfigError::Invalid("tpe.trials must be >= 1".into()));
        }

        let tune_variant = match pairs.get("tune.variant") {
            Some(text) => parse_variant(text)?,
            None => Variant::EarlyFusion,
        };

        let jobs = pairs.parse("jobs", "unsigned integer")?.unwrap_or(1);
        if jobs == 0 {
            return Err(ConfigError::Invalid("jobs must be >= 1".into()));
        }

        Ok(Self {
            source,
            windows,
            scalings,
            variants,
            tpe_trials,
            seed,
            jobs,
            tune_variant,
        })
    }

    /// A synthetic-data config with all defaults, used when no config file
    /// is given.
    pub fn synthetic_defaults(seed: u64) -> Self {
        Self::from_str(&format!("data.synthetic = true\nseed = {seed}"))
            .expect("default synthetic config is valid")
    }

    /// Applies command-line overrides (flags beat file values). A seed
    /// override also re-seeds synthetic data unless `synth.seed` was pinned
    /// in the file — the caller passes `synth_seed_pinned` for that.
    pub fn apply_overrides(
        &mut self,
        seed: Option<u64>,
        jobs: Option<usize>,
        synth_seed_pinned: bool,
    ) {
        if let Some(seed) = seed {
            self.seed = seed;
            if let DataSource::Synthetic(cfg) = &mut self.source {
                if !synth_seed_pinned {
                    cfg.seed = seed;
                }
            }
        }
        if let Some(jobs) = jobs {
            self.jobs = jobs.max(1);
        }
    }
}

/// True when the config text pins `synth.seed` explicitly.
pub fn synth_seed_pinned(text: &str) -> bool {
    parse_pairs(text)
        .map(|pairs| pairs.iter().any(|(k, _)| k == "synth.seed"))
        .unwrap_or(false)
}
