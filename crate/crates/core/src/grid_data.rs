//! Time discretization, transaction ingestion and day sampling.
//!
//! Every sample day is simulated on a three-day grid of 15-minute steps that
//! starts at midnight of the previous day. Charging sessions arrive as
//! second-resolution [`RawTransaction`]s and are snapped to that grid by
//! [`discretize`]; sessions that can no longer deliver their energy after
//! rounding are excluded and counted rather than silently dropped.

use std::fmt;
use std::io::{Read, Write};
use std::ops::Range;
use std::str::FromStr;

use chrono::{Duration, NaiveDate, NaiveDateTime, NaiveTime, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Length of one optimization step.
pub const STEP_MINUTES: u32 = 15;
/// Steps per hour of wall-clock time.
pub const STEPS_PER_HOUR: usize = 4;
/// Steps per calendar day.
pub const STEPS_PER_DAY: usize = 96;
/// Longest connection a session may keep after discretization (24 h).
pub const MAX_CONNECTION_STEPS: usize = 96;

/// The discretized optimization horizon for one sample day.
///
/// Covers `[anchor - 1 day, anchor + 2 days)` in 288 steps of 15 minutes.
/// Step `i` is the interval `[start + 15 min * i, start + 15 min * (i + 1))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimeGrid {
    anchor_date: NaiveDate,
    step_minutes: u32,
    start_offset_steps: usize,
    n_steps: usize,
}

impl TimeGrid {
    pub fn for_sample_day(anchor_date: NaiveDate) -> Self {
        Self {
            anchor_date,
            step_minutes: STEP_MINUTES,
            start_offset_steps: STEPS_PER_DAY,
            n_steps: 3 * STEPS_PER_DAY,
        }
    }

    pub fn anchor_date(&self) -> NaiveDate {
        self.anchor_date
    }

    pub fn step_minutes(&self) -> u32 {
        self.step_minutes
    }

    /// Number of steps between the grid start and midnight of the anchor date.
    pub fn start_offset_steps(&self) -> usize {
        self.start_offset_steps
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Step length in hours (Δt).
    pub fn dt_hours(&self) -> f64 {
        self.step_minutes as f64 / 60.0
    }

    pub fn start(&self) -> NaiveDateTime {
        self.anchor_date.and_time(NaiveTime::MIN)
            - Duration::minutes(self.step_minutes as i64 * self.start_offset_steps as i64)
    }

    /// Exclusive end of the horizon.
    pub fn end(&self) -> NaiveDateTime {
        self.step_start(self.n_steps)
    }

    pub fn step_start(&self, step: usize) -> NaiveDateTime {
        self.start() + Duration::minutes(self.step_minutes as i64 * step as i64)
    }

    /// Signed index of the grid boundary nearest to `ts`; exact half-step ties
    /// resolve to the later boundary.
    pub fn nearest_boundary(&self, ts: NaiveDateTime) -> i64 {
        let secs = (ts - self.start()).num_seconds();
        let step = self.step_minutes as i64 * 60;
        (secs + step / 2).div_euclid(step)
    }

    /// Index of the step that starts exactly at `ts`, if any.
    pub fn step_at(&self, ts: NaiveDateTime) -> Option<usize> {
        let secs = (ts - self.start()).num_seconds();
        let step = self.step_minutes as i64 * 60;
        if secs < 0 || secs % step != 0 || (ts - self.start()).subsec_nanos() != 0 {
            return None;
        }
        let idx = (secs / step) as usize;
        (idx < self.n_steps).then_some(idx)
    }

    /// Index of the step containing `ts`, if it lies inside the horizon.
    pub fn step_containing(&self, ts: NaiveDateTime) -> Option<usize> {
        let secs = (ts - self.start()).num_seconds();
        if secs < 0 {
            return None;
        }
        let idx = (secs / (self.step_minutes as i64 * 60)) as usize;
        (idx < self.n_steps).then_some(idx)
    }

    /// Steps that belong to the anchor (sample) date.
    pub fn anchor_steps(&self) -> Range<usize> {
        self.start_offset_steps..self.start_offset_steps + STEPS_PER_DAY
    }

    /// Steps whose arrivals are part of a sampled day: the anchor date and the
    /// day before it.
    pub fn sampled_arrival_steps(&self) -> Range<usize> {
        self.start_offset_steps.saturating_sub(STEPS_PER_DAY)..self.start_offset_steps + STEPS_PER_DAY
    }

    pub fn hour_of_day(&self, step: usize) -> u32 {
        self.step_start(step).hour()
    }

    pub fn date_of_step(&self, step: usize) -> NaiveDate {
        self.step_start(step).date()
    }

    /// Converts a duration in hours into a whole number of steps, or `None`
    /// when it is negative or not a multiple of Δt.
    pub fn steps_for_hours(&self, hours: f64) -> Option<usize> {
        if !hours.is_finite() || hours < 0.0 {
            return None;
        }
        let steps = hours / self.dt_hours();
        let rounded = steps.round();
        ((steps - rounded).abs() < 1e-9).then_some(rounded as usize)
    }
}

/// Charging-station category label attached to every session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Residential,
    Commercial,
    Shared,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Residential, Category::Commercial, Category::Shared];

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Residential => "residential",
            Category::Commercial => "commercial",
            Category::Shared => "shared",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "residential" => Ok(Category::Residential),
            "commercial" => Ok(Category::Commercial),
            "shared" => Ok(Category::Shared),
            other => Err(format!("unknown category `{other}`")),
        }
    }
}

/// One charging session as recorded, before discretization.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTransaction {
    pub station_id: String,
    pub category: Category,
    pub arrival: NaiveDateTime,
    pub departure: NaiveDateTime,
    pub energy_kwh: f64,
    pub max_power_kw: f64,
}

/// A session snapped to a [`TimeGrid`].
///
/// Power may be drawn during steps `arrive_step..depart_step`; the energy
/// target must be reached by the start of `depart_step`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transaction {
    id: u32,
    category: Category,
    arrive_step: usize,
    depart_step: usize,
    energy_kwh: f64,
    p_max_kw: f64,
    p_min_kw: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransactionError {
    #[error("transaction {id}: departure step {depart} must follow arrival step {arrive}")]
    EmptyConnection { id: u32, arrive: usize, depart: usize },
    #[error("transaction {id}: connection of {steps} steps exceeds the {MAX_CONNECTION_STEPS}-step cap")]
    TooLong { id: u32, steps: usize },
    #[error("transaction {id}: invalid energy {energy_kwh} kWh or power {p_max_kw} kW")]
    InvalidQuantity { id: u32, energy_kwh: f64, p_max_kw: f64 },
    #[error("transaction {id}: {energy_kwh} kWh cannot be delivered in {steps} steps at {p_max_kw} kW")]
    Infeasible { id: u32, steps: usize, energy_kwh: f64, p_max_kw: f64 },
}

impl Transaction {
    /// Builds a session directly in step units, checking every invariant.
    pub fn new(
        id: u32,
        category: Category,
        arrive_step: usize,
        depart_step: usize,
        energy_kwh: f64,
        p_max_kw: f64,
        v2g: bool,
    ) -> Result<Self, TransactionError> {
        if depart_step <= arrive_step {
            return Err(TransactionError::EmptyConnection { id, arrive: arrive_step, depart: depart_step });
        }
        let steps = depart_step - arrive_step;
        if steps > MAX_CONNECTION_STEPS {
            return Err(TransactionError::TooLong { id, steps });
        }
        if !(energy_kwh.is_finite() && energy_kwh >= 0.0 && p_max_kw.is_finite() && p_max_kw > 0.0) {
            return Err(TransactionError::InvalidQuantity { id, energy_kwh, p_max_kw });
        }
        if capacity_kwh(steps, p_max_kw) < energy_kwh {
            return Err(TransactionError::Infeasible { id, steps, energy_kwh, p_max_kw });
        }
        Ok(Self {
            id,
            category,
            arrive_step,
            depart_step,
            energy_kwh,
            p_max_kw,
            p_min_kw: if v2g { -p_max_kw } else { 0.0 },
        })
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn category(&self) -> Category {
        self.category
    }

    pub fn arrive_step(&self) -> usize {
        self.arrive_step
    }

    pub fn depart_step(&self) -> usize {
        self.depart_step
    }

    /// Steps during which the vehicle is plugged in.
    pub fn connected(&self) -> Range<usize> {
        self.arrive_step..self.depart_step
    }

    pub fn duration_steps(&self) -> usize {
        self.depart_step - self.arrive_step
    }

    pub fn energy_kwh(&self) -> f64 {
        self.energy_kwh
    }

    pub fn p_max_kw(&self) -> f64 {
        self.p_max_kw
    }

    pub fn p_min_kw(&self) -> f64 {
        self.p_min_kw
    }

    pub fn is_v2g(&self) -> bool {
        self.p_min_kw < 0.0
    }

    /// Same session with bidirectional (or unidirectional) power bounds.
    pub fn with_v2g(&self, v2g: bool) -> Self {
        Self { p_min_kw: if v2g { -self.p_max_kw } else { 0.0 }, ..self.clone() }
    }
}

fn capacity_kwh(steps: usize, p_max_kw: f64) -> f64 {
    steps as f64 * (STEP_MINUTES as f64 / 60.0) * p_max_kw
}

/// Why a session was dropped during discretization.
#[derive(Debug, Clone, PartialEq)]
pub enum ExclusionReason {
    /// Arrival and departure rounded onto the same boundary.
    ZeroDuration,
    /// The rounded (and capped) connection cannot deliver the energy.
    InsufficientConnection { capacity_kwh: f64, energy_kwh: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exclusion {
    pub id: u32,
    pub arrive_step: usize,
    pub reason: ExclusionReason,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Discretized {
    Kept(Transaction),
    Excluded(Exclusion),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("{field} {timestamp} lies outside the horizon [{start}, {end})")]
    OutOfHorizon {
        field: &'static str,
        timestamp: NaiveDateTime,
        start: NaiveDateTime,
        end: NaiveDateTime,
    },
}

/// Snaps a session onto `grid`.
///
/// Arrival and departure are rounded to the nearest step boundary (ties to
/// the later one); connections longer than 24 h lose their tail. The result
/// is [`Discretized::Excluded`] when the rounded connection is empty or too
/// short for the energy at full power.
pub fn discretize(raw: &RawTransaction, id: u32, grid: &TimeGrid, v2g: bool) -> Result<Discretized, GridError> {
    let out_of_horizon = |field, timestamp| GridError::OutOfHorizon {
        field,
        timestamp,
        start: grid.start(),
        end: grid.end(),
    };
    let n_steps = grid.n_steps() as i64;
    let arrive = grid.nearest_boundary(raw.arrival);
    if !(0..n_steps).contains(&arrive) {
        return Err(out_of_horizon("arrival", raw.arrival));
    }
    let arrive_step = arrive as usize;
    let depart = grid.nearest_boundary(raw.departure).min(arrive + MAX_CONNECTION_STEPS as i64);
    if depart <= arrive {
        return Ok(Discretized::Excluded(Exclusion { id, arrive_step, reason: ExclusionReason::ZeroDuration }));
    }
    if depart > n_steps {
        return Err(out_of_horizon("departure", raw.departure));
    }
    let depart_step = depart as usize;
    let capacity = capacity_kwh(depart_step - arrive_step, raw.max_power_kw);
    if capacity < raw.energy_kwh {
        return Ok(Discretized::Excluded(Exclusion {
            id,
            arrive_step,
            reason: ExclusionReason::InsufficientConnection { capacity_kwh: capacity, energy_kwh: raw.energy_kwh },
        }));
    }
    Ok(Discretized::Kept(Transaction {
        id,
        category: raw.category,
        arrive_step,
        depart_step,
        energy_kwh: raw.energy_kwh,
        p_max_kw: raw.max_power_kw,
        p_min_kw: if v2g { -raw.max_power_kw } else { 0.0 },
    }))
}

/// Keeps sessions arriving on the anchor date or the day before, ordered by
/// arrival step and then id.
pub fn sample_day(transactions: &[Transaction], grid: &TimeGrid) -> Vec<Transaction> {
    let window = grid.sampled_arrival_steps();
    let mut kept: Vec<Transaction> =
        transactions.iter().filter(|tx| window.contains(&tx.arrive_step)).cloned().collect();
    kept.sort_by_key(|tx| (tx.arrive_step, tx.id));
    kept
}

/// The fleet simulated for one sample day.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledFleet {
    pub grid: TimeGrid,
    pub transactions: Vec<Transaction>,
    /// Sessions in the sampling window dropped by the feasibility rule.
    pub excluded: Vec<Exclusion>,
}

impl SampledFleet {
    /// Fraction of in-window sessions that were excluded.
    pub fn exclusion_rate(&self) -> f64 {
        let total = self.transactions.len() + self.excluded.len();
        if total == 0 {
            0.0
        } else {
            self.excluded.len() as f64 / total as f64
        }
    }
}

/// Discretizes every raw session whose arrival falls in the grid and returns
/// the sampled day. Transaction ids are indices into `raws`.
pub fn ingest_sample_day(raws: &[RawTransaction], grid: &TimeGrid, v2g: bool) -> SampledFleet {
    let window = grid.sampled_arrival_steps();
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for (idx, raw) in raws.iter().enumerate() {
        // Arrivals further than one step outside the horizon cannot round into it.
        if raw.arrival < grid.start() - Duration::minutes(STEP_MINUTES as i64)
            || raw.arrival >= grid.end() + Duration::minutes(STEP_MINUTES as i64)
        {
            continue;
        }
        let arrive = grid.nearest_boundary(raw.arrival);
        if arrive < 0 || !window.contains(&(arrive as usize)) {
            continue;
        }
        match discretize(raw, idx as u32, grid, v2g) {
            Ok(Discretized::Kept(tx)) => kept.push(tx),
            Ok(Discretized::Excluded(ex)) => excluded.push(ex),
            // Sampled arrivals depart at most 96 steps later, inside the grid.
            Err(_) => {}
        }
    }
    SampledFleet { grid: *grid, transactions: sample_day(&kept, grid), excluded }
}

/// Header of the transaction CSV format.
pub const TRANSACTION_COLUMNS: [&str; 6] =
    ["station_id", "category", "arrival", "departure", "energy_kwh", "max_power_kw"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    /// 1-based line number in the source, header included.
    pub line: u64,
    pub field: String,
    pub message: String,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: field `{}`: {}", self.line, self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("malformed CSV at line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("{} malformed row(s); first: {}", .0.len(), .0[0])]
    Rows(Vec<RowError>),
}

/// Accepts ISO-8601 local timestamps with a `T` or space separator and
/// optional seconds. Sub-second digits are truncated.
pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    const FORMATS: [&str; 4] = ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"];
    let s = s.trim();
    FORMATS
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(s, fmt).ok())
        .and_then(|ts| ts.with_nanosecond(0))
}

pub fn format_timestamp(ts: NaiveDateTime) -> String {
    ts.format("%Y-%m-%dT%H:%M:%S").to_string()
}

pub(crate) fn header_index(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim().trim_start_matches('\u{feff}') == name)
}

/// Reads the transaction CSV. All malformed rows are collected and reported
/// together with their line numbers.
pub fn parse_transactions<R: Read>(source: R) -> Result<Vec<RawTransaction>, ParseError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = reader
        .headers()
        .map_err(|e| ParseError::Csv { line: 1, message: e.to_string() })?
        .clone();
    let mut idx = [0usize; 6];
    for (slot, name) in idx.iter_mut().zip(TRANSACTION_COLUMNS) {
        *slot = header_index(&headers, name).ok_or_else(|| ParseError::MissingColumn(name.to_string()))?;
    }
    let [station, category, arrival, departure, energy, power] = idx;

    let mut out = Vec::new();
    let mut errors = Vec::new();
    for record in reader.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                match e.kind() {
                    csv::ErrorKind::UnequalLengths { .. } => {
                        errors.push(RowError { line, field: "*".into(), message: e.to_string() });
                        continue;
                    }
                    _ => return Err(ParseError::Csv { line, message: e.to_string() }),
                }
            }
        };
        let line = record.position().map_or(0, |p| p.line());
        let mut row_err = |field: &str, message: String| {
            errors.push(RowError { line, field: field.to_string(), message });
        };
        let get = |i: usize| record.get(i).unwrap_or("");

        let station_id = get(station).to_string();
        if station_id.is_empty() {
            row_err("station_id", "empty station id".into());
            continue;
        }
        let category = match get(category).parse::<Category>() {
            Ok(c) => c,
            Err(e) => {
                row_err("category", e);
                continue;
            }
        };
        let Some(arrival) = parse_timestamp(get(arrival)) else {
            row_err("arrival", format!("unparseable timestamp `{}`", get(arrival)));
            continue;
        };
        let Some(departure) = parse_timestamp(get(departure)) else {
            row_err("departure", format!("unparseable timestamp `{}`", get(departure)));
            continue;
        };
        if departure <= arrival {
            row_err("departure", format!("departure {departure} is not after arrival {arrival}"));
            continue;
        }
        let energy_kwh = match get(energy).parse::<f64>() {
            Ok(v) if v.is_finite() && v >= 0.0 => v,
            Ok(v) => {
                row_err("energy_kwh", format!("energy must be a finite non-negative number, got {v}"));
                continue;
            }
            Err(e) => {
                row_err("energy_kwh", e.to_string());
                continue;
            }
        };
        let max_power_kw = match get(power).parse::<f64>() {
            Ok(v) if v.is_finite() && v > 0.0 => v,
            Ok(v) => {
                row_err("max_power_kw", format!("power must be a finite positive number, got {v}"));
                continue;
            }
            Err(e) => {
                row_err("max_power_kw", e.to_string());
                continue;
            }
        };
        out.push(RawTransaction { station_id, category, arrival, departure, energy_kwh, max_power_kw });
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(ParseError::Rows(errors))
    }
}

pub fn write_transactions<W: Write>(sink: W, transactions: &[RawTransaction]) -> csv::Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record(TRANSACTION_COLUMNS)?;
    for tx in transactions {
        writer.write_record([
            tx.station_id.clone(),
            tx.category.to_string(),
            format_timestamp(tx.arrival),
            format_timestamp(tx.departure),
            tx.energy_kwh.to_string(),
            tx.max_power_kw.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}
