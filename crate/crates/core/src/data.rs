//! Daily OHLC ingestion, calendar alignment, and chronological splitting.
//!
//! CSV layout is fixed: `Date,Open,High,Low,Close,AdjClose,Volume`, ISO-8601
//! dates, decimal point, no thousands separators. The `AdjClose` column
//! becomes the bar's close; the raw `Close` column is validated against the
//! day's range and then dropped.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use thiserror::Error;

/// Fixed CSV header for market data files.
pub const CSV_HEADER: &str = "Date,Open,High,Low,Close,AdjClose,Volume";

/// Default fraction of usable rows assigned to train+validation.
pub const DEFAULT_TRAIN_FRAC: f64 = 0.7;
/// Default fraction of the training block held out for validation.
pub const DEFAULT_VAL_FRAC_OF_TRAIN: f64 = 0.3;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: expected header `{expected}`, found `{found}`")]
    Header {
        line: u64,
        expected: &'static str,
        found: String,
    },
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("{date}: invalid bar: {reason}")]
    InvalidBar { date: NaiveDate, reason: String },
    #[error("{date}: dates must be strictly increasing (duplicate or out-of-order date)")]
    NonChronological { date: NaiveDate },
    #[error("market {market_id}: series is empty")]
    EmptySeries { market_id: String },
    #[error("the two calendars share no dates")]
    EmptyIntersection,
    #[error("no dates inside window {start}..={end}")]
    EmptyWindow { start: NaiveDate, end: NaiveDate },
    #[error("too few usable rows to split: need at least {needed}, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("split fraction {0} outside (0, 1)")]
    BadFraction(f64),
    #[error("{partition} partition would be empty")]
    EmptyPartition { partition: &'static str },
}

/// One market's daily session: open/high/low/close (close is the adjusted
/// close) plus end-of-day volume, which is retained but unused by features.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OhlcBar {
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

impl OhlcBar {
    /// Builds a bar, enforcing `low <= open <= high`, `low <= close <= high`,
    /// strictly positive prices, and non-negative volume.
    pub fn new(
        date: NaiveDate,
        open: f64,
        high: f64,
        low: f64,
        close: f64,
        volume: f64,
    ) -> Result<Self, DataError> {
        let invalid = |reason: String| DataError::InvalidBar { date, reason };
        for (name, v) in [("open", open), ("high", high), ("low", low), ("close", close)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(invalid(format!("{name} price {v} is not strictly positive")));
            }
        }
        if !volume.is_finite() || volume < 0.0 {
            return Err(invalid(format!("volume {volume} is negative")));
        }
        if low > high {
            return Err(invalid(format!("low {low} exceeds high {high}")));
        }
        if open < low || open > high {
            return Err(invalid(format!("open {open} outside [{low}, {high}]")));
        }
        if close < low || close > high {
            return Err(invalid(format!("close {close} outside [{low}, {high}]")));
        }
        Ok(Self {
            date,
            open,
            high,
            low,
            close,
            volume,
        })
    }
}

/// A date-ordered sequence of bars for one market.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketSeries {
    pub market_id: String,
    bars: Vec<OhlcBar>,
}

impl MarketSeries {
    /// Wraps validated bars, enforcing strictly increasing dates.
    pub fn new(market_id: impl Into<String>, bars: Vec<OhlcBar>) -> Result<Self, DataError> {
        for pair in bars.windows(2) {
            if pair[1].date <= pair[0].date {
                return Err(DataError::NonChronological { date: pair[1].date });
            }
        }
        Ok(Self {
            market_id: market_id.into(),
            bars,
        })
    }

    pub fn bars(&self) -> &[OhlcBar] {
        &self.bars
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    fn restrict_to(&self, dates: &BTreeSet<NaiveDate>) -> MarketSeries {
        MarketSeries {
            market_id: self.market_id.clone(),
            bars: self
                .bars
                .iter()
                .filter(|b| dates.contains(&b.date))
                .copied()
                .collect(),
        }
    }
}

/// Parses one market's CSV file. Any malformed or invariant-violating row is
/// an error (reported with its line number or date), never silently skipped.
pub fn parse_csv(path: impl AsRef<Path>, market_id: &str) -> Result<MarketSeries, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_csv_reader(file, market_id)
}

/// Same as [`parse_csv`] but over any reader.
pub fn parse_csv_reader(reader: impl Read, market_id: &str) -> Result<MarketSeries, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);

    let mut bars: Vec<OhlcBar> = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let line = idx as u64 + 1;
        let record = record.map_err(|e| DataError::MalformedRow {
            line,
            reason: e.to_string(),
        })?;
        if idx == 0 {
            let found = record.iter().collect::<Vec<_>>().join(",");
            if found != CSV_HEADER {
                return Err(DataError::Header {
                    line,
                    expected: CSV_HEADER,
                    found,
                });
            }
            continue;
        }
        let bar = parse_row(&record, line)?;
        if let Some(prev) = bars.last() {
            if bar.date <= prev.date {
                return Err(DataError::NonChronological { date: bar.date });
            }
        }
        bars.push(bar);
    }
    MarketSeries::new(market_id, bars)
}

fn parse_row(record: &csv::StringRecord, line: u64) -> Result<OhlcBar, DataError> {
    let malformed = |reason: String| DataError::MalformedRow { line, reason };
    if record.len() != 7 {
        return Err(malformed(format!("expected 7 fields, found {}", record.len())));
    }
    let field = |i: usize, name: &str| -> Result<f64, DataError> {
        let raw = record.get(i).unwrap_or("").trim();
        if raw.is_empty() {
            return Err(malformed(format!("missing {name}")));
        }
        raw.parse::<f64>()
            .map_err(|_| malformed(format!("{name} `{raw}` is not a number")))
    };
    let date_raw = record.get(0).unwrap_or("").trim();
    let date = NaiveDate::parse_from_str(date_raw, "%Y-%m-%d")
        .map_err(|_| malformed(format!("date `{date_raw}` is not YYYY-MM-DD")))?;
    let open = field(1, "Open")?;
    let high = field(2, "High")?;
    let low = field(3, "Low")?;
    let raw_close = field(4, "Close")?;
    let adj_close = field(5, "AdjClose")?;
    let volume = field(6, "Volume")?;

    // The raw close must be a valid session print even though only the
    // adjusted close is kept.
    if !raw_close.is_finite() || raw_close <= 0.0 {
        return Err(DataError::InvalidBar {
            date,
            reason: format!("close price {raw_close} is not strictly positive"),
        });
    }
    if raw_close < low || raw_close > high {
        return Err(DataError::InvalidBar {
            date,
            reason: format!("close {raw_close} outside [{low}, {high}]"),
        });
    }
    OhlcBar::new(date, open, high, low, adj_close, volume)
}

/// Writes a series in the same CSV layout [`parse_csv`] reads. Close and
/// AdjClose both carry the bar's close, so a write/parse cycle round-trips
/// numeric fields bit-exactly.
pub fn write_csv(series: &MarketSeries, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for bar in series.bars() {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            bar.date.format("%Y-%m-%d"),
            bar.open,
            bar.high,
            bar.low,
            bar.close,
            bar.close,
            bar.volume
        )?;
    }
    Ok(())
}

/// Two markets restricted to their shared trading dates.
///
/// Pairing is by identical calendar date: the domestic session on date `d`
/// closes before the foreign session on date `d` opens, so row `d` is the
/// freshest information available before the domestic `d+1` session.
#[derive(Debug, Clone)]
pub struct AlignedPair {
    pub domestic: MarketSeries,
    pub foreign: MarketSeries,
    pub dates: Vec<NaiveDate>,
}

impl AlignedPair {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Rows that survive feature construction: one date is consumed by the
    /// lagged close, one by the next-day target.
    pub fn usable_rows(&self) -> usize {
        self.len().saturating_sub(2)
    }

    /// Restricts the pair to dates inside `[start, end]` inclusive.
    pub fn restrict_window(
        &self,
        start: NaiveDate,
        end: NaiveDate,
    ) -> Result<AlignedPair, DataError> {
        let keep: BTreeSet<NaiveDate> = self
            .dates
            .iter()
            .copied()
            .filter(|d| *d >= start && *d <= end)
            .collect();
        if keep.is_empty() {
            return Err(DataError::EmptyWindow { start, end });
        }
        Ok(AlignedPair {
            domestic: self.domestic.restrict_to(&keep),
            foreign: self.foreign.restrict_to(&keep),
            dates: keep.into_iter().collect(),
        })
    }
}

/// Intersects the two calendars (days where either market was closed are
/// dropped) and restricts both series to the shared dates.
pub fn align_calendars(
    domestic: &MarketSeries,
    foreign: &MarketSeries,
) -> Result<AlignedPair, DataError> {
    for series in [domestic, foreign] {
        if series.is_empty() {
            return Err(DataError::EmptySeries {
                market_id: series.market_id.clone(),
            });
        }
    }
    let a: BTreeSet<NaiveDate> = domestic.bars().iter().map(|b| b.date).collect();
    let b: BTreeSet<NaiveDate> = foreign.bars().iter().map(|b| b.date).collect();
    let shared: BTreeSet<NaiveDate> = a.intersection(&b).copied().collect();
    if shared.is_empty() {
        return Err(DataError::EmptyIntersection);
    }
    Ok(AlignedPair {
        domestic: domestic.restrict_to(&shared),
        foreign: foreign.restrict_to(&shared),
        dates: shared.into_iter().collect(),
    })
}

/// Contiguous, disjoint, chronological index ranges over the usable rows of
/// an [`AlignedPair`] (equivalently, over the rows of the feature matrix
/// built from it). Test is the chronological tail.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataSplit {
    train: Range<usize>,
    validation: Range<usize>,
    test: Range<usize>,
}

impl DataSplit {
    /// Splits `n_rows` chronological rows. With the defaults, the first
    /// `floor(0.7 * n)` rows form train+validation, of which the final 30%
    /// (floor arithmetic) is validation; the remainder is test. No shuffling:
    /// row order is time order.
    pub fn chronological(
        n_rows: usize,
        train_frac: f64,
        val_frac_of_train: f64,
    ) -> Result<Self, DataError> {
        for frac in [train_frac, val_frac_of_train] {
            if !(frac > 0.0 && frac < 1.0) {
                return Err(DataError::BadFraction(frac));
            }
        }
        if n_rows < 10 {
            return Err(DataError::TooFewRows {
                needed: 10,
                got: n_rows,
            });
        }
        let train_val = (train_frac * n_rows as f64).floor() as usize;
        let train = ((1.0 - val_frac_of_train) * train_val as f64).floor() as usize;
        let validation = train_val - train;
        let test = n_rows - train_val;
        for (name, size) in [("train", train), ("validation", validation), ("test", test)] {
            if size == 0 {
                return Err(DataError::EmptyPartition { partition: name });
            }
        }
        Ok(Self {
            train: 0..train,
            validation: train..train_val,
            test: train_val..n_rows,
        })
    }

    pub fn train(&self) -> Range<usize> {
        self.train.clone()
    }

    pub fn validation(&self) -> Range<usize> {
        self.validation.clone()
    }

    pub fn test(&self) -> Range<usize> {
        self.test.clone()
    }

    /// Total rows covered by the three partitions.
    pub fn n_rows(&self) -> usize {
        self.test.end
    }
}

/// Chronological split over the usable rows of `pair` (dates minus the two
/// consumed by lagging and target shifting).
pub fn chronological_split(
    pair: &AlignedPair,
    train_frac: f64,
    val_frac_of_train: f64,
) -> Result<DataSplit, DataError> {
    DataSplit::chronological(pair.usable_rows(), train_frac, val_frac_of_train)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn flat_bar(date: &str, price: f64) -> OhlcBar {
        OhlcBar::new(d(date), price, price, price, price, 0.0).unwrap()
    }

    fn series_with_dates(id: &str, dates: &[&str]) -> MarketSeries {
        let bars = dates.iter().map(|s| flat_bar(s, 100.0)).collect();
        MarketSeries::new(id, bars).unwrap()
    }

    #[test]
    fn parse_maps_adjclose_to_close() {
        let csv = format!("{CSV_HEADER}\n2006-01-03,100,110,95,106,105,1000\n");
        let series = parse_csv_reader(csv.as_bytes(), "KO").unwrap();
        assert_eq!(series.len(), 1);
        let bar = series.bars()[0];
        assert_eq!(bar.close, 105.0);
        assert_eq!(bar.open, 100.0);
        assert_eq!(bar.volume, 1000.0);
    }

    #[test]
    fn parse_rejects_high_below_low() {
        let csv = format!("{CSV_HEADER}\n2006-01-03,100,95,110,100,100,0\n");
        let err = parse_csv_reader(csv.as_bytes(), "KO").unwrap_err();
        match err {
            DataError::InvalidBar { date, .. } => assert_eq!(date, d("2006-01-03")),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_duplicate_dates() {
        let csv = format!(
            "{CSV_HEADER}\n2006-01-03,100,110,95,100,100,0\n2006-01-03,100,110,95,100,100,0\n"
        );
        let err = parse_csv_reader(csv.as_bytes(), "KO").unwrap_err();
        match err {
            DataError::NonChronological { date } => assert_eq!(date, d("2006-01-03")),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn parse_reports_line_of_malformed_row() {
        let csv = format!(
            "{CSV_HEADER}\n2006-01-03,100,110,95,100,100,0\n2006-01-04,100,110,95,,100,0\n"
        );
        let err = parse_csv_reader(csv.as_bytes(), "KO").unwrap_err();
        match err {
            DataError::MalformedRow { line, reason } => {
                assert_eq!(line, 3);
                assert!(reason.contains("Close"), "reason: {reason}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_wrong_header() {
        let csv = "Date,Open,High,Low,Close,Volume\n";
        let err = parse_csv_reader(csv.as_bytes(), "KO").unwrap_err();
        assert!(matches!(err, DataError::Header { .. }));
    }

    #[test]
    fn parse_rejects_adjclose_outside_day_range() {
        let csv = format!("{CSV_HEADER}\n2006-01-03,100,110,95,100,200,0\n");
        let err = parse_csv_reader(csv.as_bytes(), "KO").unwrap_err();
        assert!(matches!(err, DataError::InvalidBar { .. }));
    }

    #[test]
    fn align_takes_sorted_intersection() {
        let a = series_with_dates("KO", &["2006-01-02", "2006-01-03", "2006-01-04"]);
        let b = series_with_dates("SP", &["2006-01-02", "2006-01-04", "2006-01-05"]);
        let pair = align_calendars(&a, &b).unwrap();
        assert_eq!(pair.dates, vec![d("2006-01-02"), d("2006-01-04")]);
        assert_eq!(pair.domestic.len(), 2);
        assert_eq!(pair.foreign.len(), 2);
    }

    #[test]
    fn align_identical_calendars_keeps_all_dates() {
        let a = series_with_dates("KO", &["2006-01-02", "2006-01-03"]);
        let b = series_with_dates("SP", &["2006-01-02", "2006-01-03"]);
        let pair = align_calendars(&a, &b).unwrap();
        assert_eq!(pair.len(), 2);
    }

    #[test]
    fn align_disjoint_calendars_errors() {
        let a = series_with_dates("KO", &["2006-01-02"]);
        let b = series_with_dates("SP", &["2006-01-03"]);
        assert!(matches!(
            align_calendars(&a, &b),
            Err(DataError::EmptyIntersection)
        ));
    }

    #[test]
    fn align_selects_same_dates_in_either_order() {
        let a = series_with_dates("KO", &["2006-01-02", "2006-01-03", "2006-01-05"]);
        let b = series_with_dates("SP", &["2006-01-03", "2006-01-05", "2006-01-06"]);
        let ab = align_calendars(&a, &b).unwrap();
        let ba = align_calendars(&b, &a).unwrap();
        assert_eq!(ab.dates, ba.dates);
    }

    #[test]
    fn split_sizes_match_floor_arithmetic() {
        let s = DataSplit::chronological(100, 0.7, 0.3).unwrap();
        assert_eq!(s.train(), 0..49);
        assert_eq!(s.validation(), 49..70);
        assert_eq!(s.test(), 70..100);

        let s = DataSplit::chronological(10, 0.7, 0.3).unwrap();
        assert_eq!(s.train().len(), 4);
        assert_eq!(s.validation().len(), 3);
        assert_eq!(s.test().len(), 3);
    }

    #[test]
    fn split_rejects_too_few_rows() {
        assert!(matches!(
            DataSplit::chronological(3, 0.7, 0.3),
            Err(DataError::TooFewRows { .. })
        ));
    }

    #[test]
    fn split_over_pair_uses_usable_rows() {
        let dates: Vec<String> = (1..=14).map(|i| format!("2006-01-{i:02}")).collect();
        let refs: Vec<&str> = dates.iter().map(|s| s.as_str()).collect();
        let a = series_with_dates("KO", &refs);
        let b = series_with_dates("SP", &refs);
        let pair = align_calendars(&a, &b).unwrap();
        assert_eq!(pair.usable_rows(), 12);
        let s = chronological_split(&pair, 0.7, 0.3).unwrap();
        assert_eq!(s.n_rows(), 12);
    }

    #[test]
    fn restrict_window_filters_inclusive() {
        let a = series_with_dates("KO", &["2006-01-02", "2006-01-03", "2006-01-04"]);
        let b = series_with_dates("SP", &["2006-01-02", "2006-01-03", "2006-01-04"]);
        let pair = align_calendars(&a, &b).unwrap();
        let w = pair.restrict_window(d("2006-01-03"), d("2006-01-04")).unwrap();
        assert_eq!(w.dates, vec![d("2006-01-03"), d("2006-01-04")]);
        assert!(pair
            .restrict_window(d("2007-01-01"), d("2007-12-31"))
            .is_err());
    }

    #[test]
    fn write_parse_round_trips_bit_exactly() {
        let bars = vec![
            OhlcBar::new(d("2006-01-03"), 100.25, 110.125, 95.0625, 105.5, 123456.0).unwrap(),
            OhlcBar::new(d("2006-01-04"), 0.1, 0.3, 0.1, 0.2, 0.0).unwrap(),
        ];
        let series = MarketSeries::new("KO", bars).unwrap();
        let mut buf = Vec::new();
        write_csv(&series, &mut buf).unwrap();
        let parsed = parse_csv_reader(buf.as_slice(), "KO").unwrap();
        assert_eq!(parsed, series);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn arb_bar() -> impl Strategy<Value = OhlcBar> {
            (
                0i64..20000,
                0.5f64..5000.0,
                0.0f64..0.2,
                0.0f64..0.2,
                0.0f64..1.0,
                0.0f64..1e7,
            )
                .prop_map(|(day, base, up, down, mix, volume)| {
                    let date = NaiveDate::from_num_days_from_ce_opt(730_000 + day as i32).unwrap();
                    let low = base * (1.0 - down);
                    let high = base * (1.0 + up);
                    let open = low + mix * (high - low);
                    let close = low + (1.0 - mix) * (high - low);
                    OhlcBar::new(date, open, high, low, close, volume).unwrap()
                })
        }

        proptest! {
            #[test]
            fn round_trip_preserves_numeric_fields(bars in proptest::collection::vec(arb_bar(), 1..40)) {
                let mut sorted = bars;
                sorted.sort_by_key(|b| b.date);
                sorted.dedup_by_key(|b| b.date);
                let series = MarketSeries::new("X", sorted).unwrap();
                let mut buf = Vec::new();
                write_csv(&series, &mut buf).unwrap();
                let parsed = parse_csv_reader(buf.as_slice(), "X").unwrap();
                prop_assert_eq!(parsed, series);
            }

            #[test]
            fn split_partitions_exactly(n in 10usize..5000) {
                let s = DataSplit::chronological(n, 0.7, 0.3).unwrap();
                prop_assert_eq!(s.train().start, 0);
                prop_assert_eq!(s.train().end, s.validation().start);
                prop_assert_eq!(s.validation().end, s.test().start);
                prop_assert_eq!(s.test().end, n);
                prop_assert!(s.train().len() >= 1);
                prop_assert!(s.validation().len() >= 1);
                prop_assert!(s.test().len() >= 1);
            }
        }
    }
}
