//! Day-ahead price and marginal emission factor series aligned to a grid.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::{Duration, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid_data::{format_timestamp, header_index, parse_timestamp, TimeGrid, STEP_MINUTES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    /// Day-ahead energy price in EUR/kWh.
    #[serde(alias = "price")]
    DayAheadPrice,
    /// Marginal emission factor in kgCO2/kWh.
    Mef,
}

impl SignalKind {
    pub fn unit(&self) -> &'static str {
        match self {
            SignalKind::DayAheadPrice => "EUR/kWh",
            SignalKind::Mef => "kgCO2/kWh",
        }
    }
}

impl fmt::Display for SignalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SignalKind::DayAheadPrice => "price",
            SignalKind::Mef => "mef",
        })
    }
}

impl FromStr for SignalKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "price" | "day_ahead_price" | "da" => Ok(SignalKind::DayAheadPrice),
            "mef" => Ok(SignalKind::Mef),
            other => Err(format!("unknown signal kind `{other}`")),
        }
    }
}

/// One value per grid step.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    kind: SignalKind,
    values: Vec<f64>,
}

impl Signal {
    pub fn new(kind: SignalKind, values: Vec<f64>) -> Result<Self, SignalError> {
        if let Some(&v) = values.iter().find(|v| !v.is_finite()) {
            return Err(SignalError::NonFinite { value: v });
        }
        if kind == SignalKind::Mef {
            if let Some(&v) = values.iter().find(|&&v| v < 0.0) {
                return Err(SignalError::NegativeMef { value: v });
            }
        }
        Ok(Self { kind, values })
    }

    pub fn constant(kind: SignalKind, value: f64, grid: &TimeGrid) -> Result<Self, SignalError> {
        Self::new(kind, vec![value; grid.n_steps()])
    }

    pub fn kind(&self) -> SignalKind {
        self.kind
    }

    pub fn unit(&self) -> &'static str {
        self.kind.unit()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SignalError {
    #[error("missing column `{0}`")]
    MissingColumn(&'static str),
    #[error("malformed CSV at line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("duplicate timestamp {0}")]
    Duplicate(NaiveDateTime),
    #[error("timestamp {timestamp} is not aligned to the {resolution_minutes}-minute resolution")]
    Misaligned { timestamp: NaiveDateTime, resolution_minutes: u32 },
    #[error("non-finite signal value {value}")]
    NonFinite { value: f64 },
    #[error("negative marginal emission factor {value}")]
    NegativeMef { value: f64 },
    #[error("signal does not cover the horizon; missing {}", format_gaps(.gaps))]
    MissingIntervals { gaps: Vec<(NaiveDateTime, NaiveDateTime)> },
}

fn format_gaps(gaps: &[(NaiveDateTime, NaiveDateTime)]) -> String {
    gaps.iter().map(|(a, b)| format!("[{a}, {b})")).collect::<Vec<_>>().join(", ")
}

/// A parsed signal CSV, not yet tied to any grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSeries {
    kind: SignalKind,
    resolution_minutes: u32,
    /// Sorted by timestamp, no duplicates.
    points: Vec<(NaiveDateTime, f64)>,
}

impl SignalSeries {
    pub fn kind(&self) -> SignalKind {
        self.kind
    }

    /// Either 60 (hourly) or 15.
    pub fn resolution_minutes(&self) -> u32 {
        self.resolution_minutes
    }

    pub fn points(&self) -> &[(NaiveDateTime, f64)] {
        &self.points
    }

    /// Builds a series from in-memory points, applying the same checks as the
    /// CSV reader.
    pub fn from_points(kind: SignalKind, mut points: Vec<(NaiveDateTime, f64)>) -> Result<Self, SignalError> {
        for &(_, v) in &points {
            if !v.is_finite() {
                return Err(SignalError::NonFinite { value: v });
            }
            if kind == SignalKind::Mef && v < 0.0 {
                return Err(SignalError::NegativeMef { value: v });
            }
        }
        points.sort_by_key(|p| p.0);
        if let Some(w) = points.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(SignalError::Duplicate(w[0].0));
        }
        let quarter_aligned = |ts: &NaiveDateTime| ts.second() == 0 && ts.nanosecond() == 0 && ts.minute() % 15 == 0;
        if let Some((ts, _)) = points.iter().find(|(ts, _)| !quarter_aligned(ts)) {
            return Err(SignalError::Misaligned { timestamp: *ts, resolution_minutes: STEP_MINUTES });
        }
        let all_on_hour = points.iter().all(|(ts, _)| ts.minute() == 0);
        let min_gap = points.windows(2).map(|w| (w[1].0 - w[0].0).num_minutes()).min();
        let resolution_minutes = if all_on_hour && min_gap.is_none_or(|g| g >= 60) { 60 } else { STEP_MINUTES };
        Ok(Self { kind, resolution_minutes, points })
    }

    /// Broadcasts hourly values onto their four quarter-hour steps (or maps
    /// quarter-hour values one to one) and checks full coverage of `grid`.
    pub fn align(&self, grid: &TimeGrid) -> Result<Signal, SignalError> {
        let n = grid.n_steps();
        let span = (self.resolution_minutes / grid.step_minutes()) as usize;
        let mut values = vec![f64::NAN; n];
        let start = grid.start() - Duration::minutes(self.resolution_minutes as i64);
        let first = self.points.partition_point(|(ts, _)| *ts <= start);
        for &(ts, v) in &self.points[first..] {
            if ts >= grid.end() {
                break;
            }
            let offset = (ts - grid.start()).num_minutes();
            let first_step = offset.div_euclid(grid.step_minutes() as i64);
            for k in 0..span as i64 {
                let step = first_step + k;
                if (0..n as i64).contains(&step) {
                    values[step as usize] = v;
                }
            }
        }
        let mut gaps = Vec::new();
        let mut step = 0;
        while step < n {
            if values[step].is_nan() {
                let begin = step;
                while step < n && values[step].is_nan() {
                    step += 1;
                }
                gaps.push((grid.step_start(begin), grid.step_start(step)));
            } else {
                step += 1;
            }
        }
        if !gaps.is_empty() {
            return Err(SignalError::MissingIntervals { gaps });
        }
        Signal::new(self.kind, values)
    }
}

/// Reads a `timestamp,value` CSV at hourly or quarter-hour resolution.
pub fn parse_signal_series<R: Read>(source: R, kind: SignalKind) -> Result<SignalSeries, SignalError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| SignalError::Csv { line: 1, message: e.to_string() })?
        .clone();
    let ts_idx = header_index(&headers, "timestamp").ok_or(SignalError::MissingColumn("timestamp"))?;
    let value_idx = header_index(&headers, "value").ok_or(SignalError::MissingColumn("value"))?;
    let mut points = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| SignalError::Csv {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let raw_ts = record.get(ts_idx).unwrap_or("");
        let ts = parse_timestamp(raw_ts)
            .ok_or_else(|| SignalError::Row { line, message: format!("unparseable timestamp `{raw_ts}`") })?;
        let raw_value = record.get(value_idx).unwrap_or("");
        let value = raw_value
            .parse::<f64>()
            .map_err(|e| SignalError::Row { line, message: format!("value `{raw_value}`: {e}") })?;
        points.push((ts, value));
    }
    SignalSeries::from_points(kind, points)
}

pub fn load_signal<R: Read>(source: R, kind: SignalKind, grid: &TimeGrid) -> Result<Signal, SignalError> {
    parse_signal_series(source, kind)?.align(grid)
}

pub fn write_signal_series<W: Write>(sink: W, series: &SignalSeries) -> csv::Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record(["timestamp", "value"])?;
    for (ts, v) in &series.points {
        writer.write_record([format_timestamp(*ts), v.to_string()])?;
    }
    writer.flush()?;
    Ok(())
}
