//! Per-market return features, the supervised matrix, and min-max scaling.
//!
//! Each trading day contributes five dimensionless ratios describing the
//! session relative to its own close and the previous close. A supervised
//! row pairs both markets' day-`t` ratios with the next day's domestic
//! close-to-close return as the target. Scaling is affine min-max fitted on
//! training rows only, so the exact inverse recovers raw units for metrics.

use std::io::Write;

use chrono::NaiveDate;
use thiserror::Error;

use crate::data::{AlignedPair, DataSplit, MarketSeries, OhlcBar};
use crate::num::Real;

/// Feature count per market: dhtc, dotc, dltc, octc, ootc.
pub const FEATURES_PER_MARKET: usize = 5;
/// Total input width when both markets are present.
pub const JOINT_FEATURES: usize = 2 * FEATURES_PER_MARKET;
/// Scaler column index of the target (after the ten feature columns).
pub const TARGET_COLUMN: usize = JOINT_FEATURES;
/// Column count handled by a fitted scaler: ten features plus the target.
pub const SCALED_COLUMNS: usize = JOINT_FEATURES + 1;

/// Header of the optional feature-matrix export.
pub const FEATURE_CSV_HEADER: &str =
    "date,ko_dhtc,ko_dotc,ko_dltc,ko_octc,ko_ootc,us_dhtc,us_dotc,us_dltc,us_octc,us_ootc,target";

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("need at least 3 aligned dates to build a feature matrix, got {got}")]
    TooFewDates { got: usize },
    #[error("{date}: close {close} cannot serve as a return denominator")]
    BadDenominator { date: NaiveDate, close: f64 },
}

#[derive(Debug, Error)]
pub enum ScaleError {
    #[error("no rows to fit the scaler on")]
    NoRows,
    #[error("scaler output range [{0}, {1}] is empty")]
    BadRange(f64, f64),
    #[error("column {column} is constant ({value}) over the fitting rows")]
    ConstantColumn { column: usize, value: f64 },
}

/// One day's return ratios for a single market.
///
/// `dhtc`/`dotc`/`dltc` compare the day's high/open/low to its own close;
/// `octc`/`ootc` compare the close/open to the previous close. For a valid
/// bar `dhtc >= 0 >= dltc` and `dltc <= dotc <= dhtc` by OHLC ordering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector {
    pub dhtc: f64,
    pub dotc: f64,
    pub dltc: f64,
    pub octc: f64,
    pub ootc: f64,
}

impl FeatureVector {
    pub fn as_array(&self) -> [f64; FEATURES_PER_MARKET] {
        [self.dhtc, self.dotc, self.dltc, self.octc, self.ootc]
    }
}

/// Daily ratios for `bar_t` given the previous session `bar_prev`.
///
/// The denominator checks are defensive: validated bars always have strictly
/// positive closes.
pub fn compute_features(bar_t: &OhlcBar, bar_prev: &OhlcBar) -> Result<FeatureVector, FeatureError> {
    for bar in [bar_t, bar_prev] {
        if bar.close <= 0.0 {
            return Err(FeatureError::BadDenominator {
                date: bar.date,
                close: bar.close,
            });
        }
    }
    let c = bar_t.close;
    let prev_c = bar_prev.close;
    Ok(FeatureVector {
        dhtc: (bar_t.high - c) / c,
        dotc: (bar_t.open - c) / c,
        dltc: (bar_t.low - c) / c,
        octc: (c - prev_c) / prev_c,
        ootc: (bar_t.open - prev_c) / prev_c,
    })
}

fn series_features(series: &MarketSeries) -> Result<Vec<FeatureVector>, FeatureError> {
    series
        .bars()
        .windows(2)
        .map(|w| compute_features(&w[1], &w[0]))
        .collect()
}

/// One supervised observation: both markets' day-`t` ratios and the day
/// `t+1` domestic close-to-close return.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureRow {
    pub date: NaiveDate,
    pub domestic: FeatureVector,
    pub foreign: FeatureVector,
    pub target: f64,
}

impl FeatureRow {
    /// The ten inputs, domestic block first.
    pub fn joint_input(&self) -> [f64; JOINT_FEATURES] {
        let mut out = [0.0; JOINT_FEATURES];
        out[..FEATURES_PER_MARKET].copy_from_slice(&self.domestic.as_array());
        out[FEATURES_PER_MARKET..].copy_from_slice(&self.foreign.as_array());
        out
    }
}

/// Date-ordered supervised rows over an aligned pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: Vec<FeatureRow>,
}

impl FeatureMatrix {
    pub fn rows(&self) -> &[FeatureRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.rows.iter().map(|r| r.date)
    }

    /// Domestic 5-wide inputs, one per row.
    pub fn domestic_inputs(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.domestic.as_array().to_vec()).collect()
    }

    /// Foreign 5-wide inputs, one per row.
    pub fn foreign_inputs(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.foreign.as_array().to_vec()).collect()
    }

    /// Concatenated 10-wide inputs, domestic block first.
    pub fn joint_inputs(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.joint_input().to_vec()).collect()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.target).collect()
    }

    /// Restricts to the row index range of one split partition.
    pub fn select(&self, range: std::ops::Range<usize>) -> FeatureMatrix {
        FeatureMatrix {
            rows: self.rows[range].to_vec(),
        }
    }
}

/// Builds the supervised matrix from an aligned pair.
///
/// The first aligned date is consumed by the lagged close and the last by
/// the target shift, so `len = |dates| - 2`. Row `t` carries day-`t` features
/// and the day-`t+1` domestic `octc`. No cross-market ratios are formed; the
/// two markets meet only as separate blocks of one row.
pub fn build_matrix(pair: &AlignedPair) -> Result<FeatureMatrix, FeatureError> {
    if pair.len() < 3 {
        return Err(FeatureError::TooFewDates { got: pair.len() });
    }
    let domestic = series_features(&pair.domestic)?;
    let foreign = series_features(&pair.foreign)?;
    debug_assert_eq!(domestic.len(), pair.len() - 1);
    let rows = (0..pair.len() - 2)
        .map(|j| FeatureRow {
            date: pair.dates[j + 1],
            domestic: domestic[j],
            foreign: foreign[j],
            target: domestic[j + 1].octc,
        })
        .collect();
    Ok(FeatureMatrix { rows })
}

/// Affine per-column min-max map fitted on training rows only.
///
/// `transform` sends the column's training minimum to `out_min` and maximum
/// to `out_max`; values outside the training range extrapolate linearly
/// (clipping would destroy invertibility, and predictions must be mapped
/// back to raw units). `inverse_transform` is the exact algebraic inverse.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MinMaxScaler<T> {
    bounds: Vec<(T, T)>,
    out_min: T,
    out_max: T,
}

impl<T: Real> MinMaxScaler<T> {
    /// Fits per-column bounds over `rows` (all rows must share a width).
    pub fn fit<R: AsRef<[T]>>(rows: &[R], out_range: (T, T)) -> Result<Self, ScaleError> {
        let (out_min, out_max) = out_range;
        if out_max <= out_min {
            return Err(ScaleError::BadRange(out_min.as_f64(), out_max.as_f64()));
        }
        let first = rows.first().ok_or(ScaleError::NoRows)?;
        let n_cols = first.as_ref().len();
        if n_cols == 0 {
            return Err(ScaleError::NoRows);
        }
        let mut bounds = vec![(T::infinity(), T::neg_infinity()); n_cols];
        for row in rows {
            let row = row.as_ref();
            assert_eq!(row.len(), n_cols, "scaler fit: ragged row width");
            for (j, &x) in row.iter().enumerate() {
                let (lo, hi) = &mut bounds[j];
                if x < *lo {
                    *lo = x;
                }
                if x > *hi {
                    *hi = x;
                }
            }
        }
        for (column, &(lo, hi)) in bounds.iter().enumerate() {
            if !(hi > lo) {
                return Err(ScaleError::ConstantColumn {
                    column,
                    value: lo.as_f64(),
                });
            }
        }
        Ok(Self {
            bounds,
            out_min,
            out_max,
        })
    }

    pub fn n_columns(&self) -> usize {
        self.bounds.len()
    }

    /// Training-range bounds of one column.
    pub fn column_bounds(&self, column: usize) -> (T, T) {
        self.bounds[column]
    }

    pub fn out_range(&self) -> (T, T) {
        (self.out_min, self.out_max)
    }

    pub fn transform(&self, x: T, column: usize) -> T {
        let (lo, hi) = self.bounds[column];
        (x - lo) / (hi - lo) * (self.out_max - self.out_min) + self.out_min
    }

    pub fn inverse_transform(&self, y: T, column: usize) -> T {
        let (lo, hi) = self.bounds[column];
        (y - self.out_min) / (self.out_max - self.out_min) * (hi - lo) + lo
    }

    pub fn transform_row(&self, row: &[T]) -> Vec<T> {
        assert_eq!(row.len(), self.n_columns(), "transform_row: width mismatch");
        row.iter()
            .enumerate()
            .map(|(j, &x)| self.transform(x, j))
            .collect()
    }
}

/// Fits the eleven-column scaler (ten features, then the target) over the
/// training partition of `split`. Validation and test rows never influence
/// the bounds.
pub fn fit_scaler(
    matrix: &FeatureMatrix,
    split: &DataSplit,
    out_range: (f64, f64),
) -> Result<MinMaxScaler<f64>, ScaleError> {
    assert_eq!(
        split.n_rows(),
        matrix.len(),
        "fit_scaler: split covers {} rows but the matrix has {}",
        split.n_rows(),
        matrix.len()
    );
    let rows: Vec<[f64; SCALED_COLUMNS]> = matrix.rows()[split.train()]
        .iter()
        .map(row_as_columns)
        .collect();
    MinMaxScaler::fit(&rows, out_range)
}

fn row_as_columns(row: &FeatureRow) -> [f64; SCALED_COLUMNS] {
    let mut out = [0.0; SCALED_COLUMNS];
    out[..JOINT_FEATURES].copy_from_slice(&row.joint_input());
    out[TARGET_COLUMN] = row.target;
    out
}

fn row_from_columns(date: NaiveDate, cols: &[f64; SCALED_COLUMNS]) -> FeatureRow {
    let pick = |offset: usize| FeatureVector {
        dhtc: cols[offset],
        dotc: cols[offset + 1],
        dltc: cols[offset + 2],
        octc: cols[offset + 3],
        ootc: cols[offset + 4],
    };
    FeatureRow {
        date,
        domestic: pick(0),
        foreign: pick(FEATURES_PER_MARKET),
        target: cols[TARGET_COLUMN],
    }
}

/// Applies a fitted scaler to every row (all partitions), returning the
/// scaled matrix. Transformed training rows land inside the output range by
/// construction; other partitions may extrapolate past it.
pub fn transform_matrix(scaler: &MinMaxScaler<f64>, matrix: &FeatureMatrix) -> FeatureMatrix {
    assert_eq!(scaler.n_columns(), SCALED_COLUMNS, "scaler has wrong width");
    let rows = matrix
        .rows()
        .iter()
        .map(|row| {
            let mut cols = row_as_columns(row);
            for (j, value) in cols.iter_mut().enumerate() {
                *value = scaler.transform(*value, j);
            }
            row_from_columns(row.date, &cols)
        })
        .collect();
    FeatureMatrix { rows }
}

/// Writes the matrix as CSV under [`FEATURE_CSV_HEADER`].
pub fn write_features_csv(matrix: &FeatureMatrix, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{FEATURE_CSV_HEADER}")?;
    for row in matrix.rows() {
        let cols = row_as_columns(row);
        write!(out, "{}", row.date.format("%Y-%m-%d"))?;
        for v in cols {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
