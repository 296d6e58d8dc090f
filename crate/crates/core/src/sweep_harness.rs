//! Day-by-day experiment sweeps over BAU strategy, product, window and lead
//! time, plus summary statistics over the resulting table.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{Duration, NaiveDate, NaiveTime};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bau_scheduler::{schedule_bau, BauError, BauKind, BauStrategy, Schedule};
use crate::flex_products::{solve_product, Accounting, FlexError, FlexOptions, FlexRequest, FlexResult, Product};
use crate::grid_data::{self, ingest_sample_day, Category, RawTransaction, SampledFleet, TimeGrid, Transaction, STEP_MINUTES};
use crate::signals::{self, Signal, SignalKind, SignalSeries};
use crate::synth_fleet::{self, SignalSpec};

pub const RESULT_COLUMNS: [&str; 12] = [
    "date",
    "product",
    "bau",
    "v2g",
    "window_start",
    "window_len",
    "lead_h",
    "magnitude_kw",
    "cost_delta",
    "emission_delta",
    "status",
    "category",
];

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid sweep config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("invalid sweep config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Transactions { path: String, source: grid_data::ParseError },
    #[error("{what}: {source}")]
    Signal { what: String, source: signals::SignalError },
    #[error(transparent)]
    Fleet(#[from] synth_fleet::SpecError),
    #[error("cannot write {path}: {message}")]
    Output { path: String, message: String },
}

/// Station category filter; `All` pools every category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum CategorySel {
    All,
    Only(Category),
}

impl CategorySel {
    pub fn matches(&self, c: Category) -> bool {
        match self {
            CategorySel::All => true,
            CategorySel::Only(x) => *x == c,
        }
    }
}

impl fmt::Display for CategorySel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CategorySel::All => f.write_str("all"),
            CategorySel::Only(c) => f.write_str(c.as_str()),
        }
    }
}

impl FromStr for CategorySel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim().eq_ignore_ascii_case("all") {
            Ok(CategorySel::All)
        } else {
            s.parse::<Category>().map(CategorySel::Only).map_err(|e| e.to_string())
        }
    }
}

impl TryFrom<String> for CategorySel {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<CategorySel> for String {
    fn from(c: CategorySel) -> String {
        c.to_string()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPaths {
    pub transactions: Option<PathBuf>,
    pub prices: Option<PathBuf>,
    pub mef: Option<PathBuf>,
}

/// Fills whatever `inputs` leaves out with generated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSource {
    pub seed: u64,
    /// Stations split over categories by the default shares.
    #[serde(default = "default_stations")]
    pub n_stations: usize,
    /// Optional fleet spec file used instead of the default mix.
    pub fleet_spec: Option<PathBuf>,
    pub signal_seed: Option<u64>,
}

fn default_stations() -> usize {
    100
}

fn default_categories() -> Vec<CategorySel> {
    vec![CategorySel::All]
}

fn default_v2g() -> Vec<bool> {
    vec![false]
}

fn default_parallelism() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub dates: Vec<NaiveDate>,
    /// Inclusive date range, added to `dates`.
    pub start_date: Option<NaiveDate>,
    pub end_date: Option<NaiveDate>,
    #[serde(default = "default_categories")]
    pub categories: Vec<CategorySel>,
    pub strategies: Vec<BauKind>,
    pub products: Vec<Product>,
    pub lead_times_h: Vec<f64>,
    /// Day-local `HH:MM`.
    pub window_starts: Vec<String>,
    pub window_lens_h: Vec<f64>,
    #[serde(default = "default_v2g")]
    pub v2g: Vec<bool>,
    #[serde(default)]
    pub inputs: InputPaths,
    pub synthetic: Option<SyntheticSource>,
    pub output: Option<PathBuf>,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn parse_clock(s: &str) -> Option<NaiveTime> {
    NaiveTime::parse_from_str(s.trim(), "%H:%M").ok()
}

fn sorted_unique_f64(v: &[f64]) -> Vec<f64> {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

impl SweepConfig {
    pub fn from_toml(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, SweepError> {
        let mut config: SweepConfig = toml::from_str(text)?;
        config.base_dir = base_dir.into();
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, SweepError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| SweepError::Io { path: path.display().to_string(), source })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Sample dates, sorted and deduplicated.
    pub fn all_dates(&self) -> Vec<NaiveDate> {
        let mut out: BTreeSet<NaiveDate> = self.dates.iter().copied().collect();
        if let (Some(a), Some(b)) = (self.start_date, self.end_date) {
            out.extend(a.iter_days().take_while(|d| *d <= b));
        }
        out.into_iter().collect()
    }

    pub fn window_start_times(&self) -> Vec<NaiveTime> {
        let mut v: Vec<NaiveTime> = self.window_starts.iter().filter_map(|s| parse_clock(s)).collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn validate(&self) -> Result<(), SweepError> {
        let bad = |m: String| Err(SweepError::Config(m));
        if self.start_date.is_some() != self.end_date.is_some() {
            return bad("start_date and end_date must be given together".into());
        }
        if matches!((self.start_date, self.end_date), (Some(a), Some(b)) if b < a) {
            return bad("end_date precedes start_date".into());
        }
        for (name, empty) in [
            ("dates", self.all_dates().is_empty()),
            ("categories", self.categories.is_empty()),
            ("strategies", self.strategies.is_empty()),
            ("products", self.products.is_empty()),
            ("lead_times_h", self.lead_times_h.is_empty()),
            ("window_starts", self.window_starts.is_empty()),
            ("window_lens_h", self.window_lens_h.is_empty()),
            ("v2g", self.v2g.is_empty()),
        ] {
            if empty {
                return bad(format!("{name} must not be empty"));
            }
        }
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1".into());
        }
        for s in &self.window_starts {
            if parse_clock(s).is_none() {
                return bad(format!("window start `{s}` is not HH:MM"));
            }
        }
        let grid = TimeGrid::for_sample_day(self.all_dates()[0]);
        for start in self.window_start_times() {
            for &len in &self.window_lens_h {
                for &lead in &self.lead_times_h {
                    FlexRequest::at_clock(Product::Redispatch, start, len, lead, false, &grid)
                        .map_err(|e| SweepError::Config(e.to_string()))?;
                }
            }
        }
        if self.inputs.transactions.is_none() && self.synthetic.is_none() {
            return bad("either inputs.transactions or a [synthetic] table is required".into());
        }
        let has_signal = |p: &Option<PathBuf>| p.is_some() || self.synthetic.is_some();
        if self.strategies.contains(&BauKind::Cost) && !has_signal(&self.inputs.prices) {
            return bad("cost-min BAU needs a price signal".into());
        }
        if self.strategies.contains(&BauKind::Mef) && !has_signal(&self.inputs.mef) {
            return bad("MEF-min BAU needs an MEF signal".into());
        }
        Ok(())
    }

    /// Number of rows a sweep produces.
    pub fn n_cells(&self) -> usize {
        self.all_dates().len()
            * self.categories.iter().collect::<BTreeSet<_>>().len()
            * self.strategies.iter().collect::<BTreeSet<_>>().len()
            * self.v2g.iter().collect::<BTreeSet<_>>().len()
            * self.products.iter().collect::<BTreeSet<_>>().len()
            * self.window_start_times().len()
            * sorted_unique_f64(&self.window_lens_h).len()
            * sorted_unique_f64(&self.lead_times_h).len()
    }

    /// SHA-256 of the config with run-only settings (parallelism, output,
    /// base directory) blanked.
    pub fn digest(&self) -> String {
        let normalized = SweepConfig { parallelism: 0, output: None, base_dir: PathBuf::new(), ..self.clone() };
        let bytes = serde_json::to_vec(&normalized).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Loaded sessions and signal series shared by every day of a sweep.
#[derive(Debug, Clone)]
pub struct SweepInputs {
    /// Sorted by arrival.
    raws: Vec<RawTransaction>,
    prices: Option<SignalSeries>,
    mef: Option<SignalSeries>,
}

impl SweepInputs {
    pub fn new(mut raws: Vec<RawTransaction>, prices: Option<SignalSeries>, mef: Option<SignalSeries>) -> Self {
        raws.sort_by(|a, b| (a.arrival, &a.station_id, a.departure).cmp(&(b.arrival, &b.station_id, b.departure)));
        Self { raws, prices, mef }
    }

    pub fn load(config: &SweepConfig) -> Result<Self, SweepError> {
        let dates = config.all_dates();
        let (first, last) = (dates[0], *dates.last().expect("validated non-empty"));
        let open = |p: &Path| {
            let path = config.resolve(p);
            std::fs::File::open(&path).map_err(|source| SweepError::Io { path: path.display().to_string(), source })
        };

        let raws = match (&config.inputs.transactions, &config.synthetic) {
            (Some(p), _) => grid_data::parse_transactions(std::io::BufReader::new(open(p)?))
                .map_err(|source| SweepError::Transactions { path: p.display().to_string(), source })?,
            (None, Some(s)) => {
                let specs = match &s.fleet_spec {
                    Some(p) => synth_fleet::load_fleet_specs(&config.resolve(p))?,
                    None => synth_fleet::default_mix(s.n_stations, first - Duration::days(1), last, s.seed),
                };
                synth_fleet::generate_all(&specs)
            }
            (None, None) => return Err(SweepError::Config("no transaction source".into())),
        };

        let synthetic_signals = match &config.synthetic {
            Some(s) if config.inputs.prices.is_none() || config.inputs.mef.is_none() => {
                let spec = SignalSpec { seed: s.signal_seed.unwrap_or(s.seed), ..SignalSpec::default() };
                Some(
                    synth_fleet::generate_signals(first, last, &spec)
                        .map_err(|source| SweepError::Signal { what: "synthetic signals".into(), source })?,
                )
            }
            _ => None,
        };
        let read_signal = |p: &Option<PathBuf>, kind: SignalKind, fallback: Option<SignalSeries>| match p {
            Some(p) => signals::parse_signal_series(std::io::BufReader::new(open(p)?), kind)
                .map(Some)
                .map_err(|source| SweepError::Signal { what: p.display().to_string(), source }),
            None => Ok(fallback),
        };
        let (sp, sm) = synthetic_signals.map_or((None, None), |(p, m)| (Some(p), Some(m)));
        let prices = read_signal(&config.inputs.prices, SignalKind::DayAheadPrice, sp)?;
        let mef = read_signal(&config.inputs.mef, SignalKind::Mef, sm)?;
        Ok(Self::new(raws, prices, mef))
    }

    pub fn raws(&self) -> &[RawTransaction] {
        &self.raws
    }

    /// Sessions sampled for `date`, restricted to `category`.
    pub fn fleet(&self, date: NaiveDate, category: CategorySel, v2g: bool) -> SampledFleet {
        let grid = TimeGrid::for_sample_day(date);
        let step = Duration::minutes(STEP_MINUTES as i64);
        let lo = self.raws.partition_point(|r| r.arrival < grid.start() - step);
        let hi = self.raws.partition_point(|r| r.arrival < grid.step_start(grid.anchor_steps().end) + step);
        let subset: Vec<RawTransaction> =
            self.raws[lo..hi].iter().filter(|r| category.matches(r.category)).cloned().collect();
        ingest_sample_day(&subset, &grid, v2g)
    }

    /// Price and MEF aligned to the grid of `date`.
    pub fn signals(&self, date: NaiveDate) -> Result<(Option<Signal>, Option<Signal>), SweepError> {
        let grid = TimeGrid::for_sample_day(date);
        let align = |s: &Option<SignalSeries>, what: &str| {
            s.as_ref()
                .map(|s| s.align(&grid))
                .transpose()
                .map_err(|source| SweepError::Signal { what: format!("{what} for {date}"), source })
        };
        Ok((align(&self.prices, "price")?, align(&self.mef, "MEF")?))
    }
}

/// One output row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub date: NaiveDate,
    pub product: Product,
    pub bau: BauKind,
    pub v2g: bool,
    pub window_start: String,
    pub window_len: f64,
    pub lead_h: f64,
    pub magnitude_kw: Option<f64>,
    pub cost_delta: Option<f64>,
    pub emission_delta: Option<f64>,
    pub status: String,
    pub category: CategorySel,
}

impl ResultRow {
    fn sort_key(&self) -> (NaiveDate, CategorySel, BauKind, bool, Product, &str, u64, u64) {
        (
            self.date,
            self.category,
            self.bau,
            self.v2g,
            self.product,
            &self.window_start,
            self.window_len.to_bits(),
            self.lead_h.to_bits(),
        )
    }

    /// Grouping value for a column name.
    pub fn key(&self, column: &str) -> Option<String> {
        Some(match column {
            "date" => self.date.to_string(),
            "product" => self.product.to_string(),
            "bau" => self.bau.to_string(),
            "v2g" => self.v2g.to_string(),
            "window_start" => self.window_start.clone(),
            "window_len" => fmt_num(self.window_len),
            "lead_h" => fmt_num(self.lead_h),
            "status" => self.status.clone(),
            "category" => self.category.to_string(),
            _ => return None,
        })
    }
}

/// Formats a value rounded to 1e-9 with `-0` folded into `0`.
pub fn fmt_num(x: f64) -> String {
    let r = (x * 1e9).round() / 1e9;
    if r == 0.0 {
        "0".into()
    } else {
        r.to_string()
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_default()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TableError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
}

impl ResultTable {
    pub fn sort(&mut self) {
        self.rows.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn status_counts(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for r in &self.rows {
            *out.entry(r.status.clone()).or_insert(0) += 1;
        }
        out
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(RESULT_COLUMNS)?;
        for r in &self.rows {
            w.write_record([
                r.date.to_string(),
                r.product.to_string(),
                r.bau.to_string(),
                r.v2g.to_string(),
                r.window_start.clone(),
                fmt_num(r.window_len),
                fmt_num(r.lead_h),
                fmt_opt(r.magnitude_kw),
                fmt_opt(r.cost_delta),
                fmt_opt(r.emission_delta),
                r.status.clone(),
                r.category.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a table written by [`ResultTable::write_csv`]. A missing
    /// `category` column reads as `all`.
    pub fn read_csv<R: Read>(source: R) -> Result<Self, TableError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
        let headers = rdr
            .headers()
            .map_err(|e| TableError::Row { line: 1, message: e.to_string() })?
            .clone();
        let mut idx = [usize::MAX; 12];
        for (slot, name) in idx.iter_mut().zip(RESULT_COLUMNS) {
            match grid_data::header_index(&headers, name) {
                Some(i) => *slot = i,
                None if name == "category" => {}
                None => return Err(TableError::MissingColumn(name.to_string())),
            }
        }
        let mut rows = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let line = i as u64 + 2;
            let record = record.map_err(|e| TableError::Row { line, message: e.to_string() })?;
            let field = |k: usize| record.get(idx[k]).unwrap_or("");
            let err = |name: &str, v: &str| TableError::Row { line, message: format!("bad {name} `{v}`") };
            let num = |k: usize| -> Result<f64, TableError> {
                field(k).parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| err(RESULT_COLUMNS[k], field(k)))
            };
            let opt = |k: usize| -> Result<Option<f64>, TableError> {
                if field(k).is_empty() {
                    Ok(None)
                } else {
                    num(k).map(Some)
                }
            };
            rows.push(ResultRow {
                date: field(0).parse().map_err(|_| err("date", field(0)))?,
                product: field(1).parse().map_err(|_| err("product", field(1)))?,
                bau: field(2).parse().map_err(|_| err("bau", field(2)))?,
                v2g: field(3).parse().map_err(|_| err("v2g", field(3)))?,
                window_start: parse_clock(field(4))
                    .map(|t| t.format("%H:%M").to_string())
                    .ok_or_else(|| err("window_start", field(4)))?,
                window_len: num(5)?,
                lead_h: num(6)?,
                magnitude_kw: opt(7)?,
                cost_delta: opt(8)?,
                emission_delta: opt(9)?,
                status: field(10).to_string(),
                category: if idx[11] == usize::MAX {
                    CategorySel::All
                } else {
                    field(11).parse().map_err(|_| err("category", field(11)))?
                },
            });
        }
        Ok(Self { rows })
    }
}

/// Product cells evaluated against one BAU schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSpec {
    pub product: Product,
    pub window_start: NaiveTime,
    pub window_len_h: f64,
    pub lead_h: f64,
}

/// BAU schedule for one (date, category, strategy, v2g) together with the
/// product results computed on it.
#[derive(Debug)]
pub struct DayRun {
    pub fleet: SampledFleet,
    pub bau: Result<Schedule, BauError>,
    pub cells: Vec<(CellSpec, Result<FlexResult, FlexError>)>,
}

/// Computes the BAU schedule for a fleet and solves every cell on it.
pub fn run_day(
    fleet: SampledFleet,
    strategy: BauKind,
    prices: Option<&Signal>,
    mef: Option<&Signal>,
    cells: &[CellSpec],
) -> DayRun {
    let bau = BauStrategy::from_kind(strategy, prices, mef).and_then(|s| schedule_bau(&fleet.transactions, &fleet.grid, &s));
    let cells = cells
        .iter()
        .map(|cell| {
            let result = match &bau {
                Ok(bau) => flex_cell(bau, &fleet.transactions, &fleet.grid, cell, Accounting { prices, mef }),
                Err(e) => Err(FlexError::Config(format!("BAU failed: {e}"))),
            };
            (cell.clone(), result)
        })
        .collect();
    DayRun { fleet, bau, cells }
}

fn flex_cell(
    bau: &Schedule,
    txs: &[Transaction],
    grid: &TimeGrid,
    cell: &CellSpec,
    accounting: Accounting<'_>,
) -> Result<FlexResult, FlexError> {
    let v2g = txs.first().is_some_and(Transaction::is_v2g);
    let request = FlexRequest::at_clock(cell.product, cell.window_start, cell.window_len_h, cell.lead_h, v2g, grid)?;
    solve_product(bau, txs, &request, accounting, FlexOptions::default())
}

fn status_of(result: &Result<FlexResult, FlexError>, bau_ok: bool) -> String {
    match result {
        Ok(r) => r.status.as_str().to_string(),
        Err(_) if !bau_ok => "bau_error".into(),
        Err(FlexError::Internal { status, .. }) => status.to_string(),
        Err(FlexError::Request(_)) => "request_error".into(),
        Err(_) => "error".into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct BaseKey {
    date: NaiveDate,
    category: CategorySel,
    strategy: BauKind,
    v2g: bool,
}

/// Runs the sweep described by `config` on already-loaded inputs.
pub fn run_sweep_on(config: &SweepConfig, inputs: &SweepInputs) -> Result<ResultTable, SweepError> {
    config.validate()?;
    let dates = config.all_dates();
    // Signals must cover every horizon before any solve starts.
    for &date in &dates {
        let (p, m) = inputs.signals(date)?;
        if config.strategies.contains(&BauKind::Cost) && p.is_none() {
            return Err(SweepError::Config("cost-min BAU needs a price signal".into()));
        }
        if config.strategies.contains(&BauKind::Mef) && m.is_none() {
            return Err(SweepError::Config("MEF-min BAU needs an MEF signal".into()));
        }
    }

    let cells: Vec<CellSpec> = {
        let products: BTreeSet<Product> = config.products.iter().copied().collect();
        let mut v = Vec::new();
        for &product in &products {
            for window_start in config.window_start_times() {
                for &window_len_h in &sorted_unique_f64(&config.window_lens_h) {
                    for &lead_h in &sorted_unique_f64(&config.lead_times_h) {
                        v.push(CellSpec { product, window_start, window_len_h, lead_h });
                    }
                }
            }
        }
        v
    };
    let mut bases = Vec::new();
    for &date in &dates {
        for &category in config.categories.iter().collect::<BTreeSet<_>>() {
            for &strategy in config.strategies.iter().collect::<BTreeSet<_>>() {
                for &v2g in config.v2g.iter().collect::<BTreeSet<_>>() {
                    bases.push(BaseKey { date, category, strategy, v2g });
                }
            }
        }
    }

    let work = |key: &BaseKey| -> Vec<ResultRow> {
        let (prices, mef) = inputs.signals(key.date).unwrap_or((None, None));
        let fleet = inputs.fleet(key.date, key.category, key.v2g);
        let run = run_day(fleet, key.strategy, prices.as_ref(), mef.as_ref(), &cells);
        if let Err(e) = &run.bau {
            tracing::warn!(date = %key.date, strategy = %key.strategy, error = %e, "BAU failed");
        }
        run.cells
            .iter()
            .map(|(cell, result)| {
                if let Err(e) = result {
                    tracing::warn!(date = %key.date, product = %cell.product, error = %e, "cell failed");
                }
                let ok = result.as_ref().ok();
                ResultRow {
                    date: key.date,
                    product: cell.product,
                    bau: key.strategy,
                    v2g: key.v2g,
                    window_start: cell.window_start.format("%H:%M").to_string(),
                    window_len: cell.window_len_h,
                    lead_h: cell.lead_h,
                    magnitude_kw: ok.map(|r| r.magnitude_kw),
                    cost_delta: ok.and_then(|r| r.cost_delta),
                    emission_delta: ok.and_then(|r| r.emission_delta),
                    status: status_of(result, run.bau.is_ok()),
                    category: key.category,
                }
            })
            .collect()
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| SweepError::Config(format!("cannot start worker pool: {e}")))?;
    let rows: Vec<ResultRow> = pool.install(|| bases.par_iter().flat_map_iter(work).collect());
    let mut table = ResultTable { rows };
    table.sort();
    tracing::info!(rows = table.len(), "sweep finished");
    Ok(table)
}

/// Loads inputs and runs the sweep.
pub fn run_sweep(config: &SweepConfig) -> Result<ResultTable, SweepError> {
    let inputs = SweepInputs::load(config)?;
    run_sweep_on(config, &inputs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMetadata {
    pub config_sha256: String,
    pub tool_version: String,
    pub rows: usize,
    pub expected_rows: usize,
    pub status_counts: BTreeMap<String, usize>,
}

pub fn metadata(config: &SweepConfig, table: &ResultTable) -> SweepMetadata {
    SweepMetadata {
        config_sha256: config.digest(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        rows: table.len(),
        expected_rows: config.n_cells(),
        status_counts: table.status_counts(),
    }
}

/// Path of the JSON sidecar written next to a result CSV.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    let mut name = csv_path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    csv_path.with_file_name(name)
}

/// Writes the result CSV and its metadata sidecar.
pub fn write_outputs(config: &SweepConfig, table: &ResultTable, csv_path: &Path) -> Result<SweepMetadata, SweepError> {
    let out_err = |path: &Path, message: String| SweepError::Output { path: path.display().to_string(), message };
    let file = std::fs::File::create(csv_path).map_err(|e| out_err(csv_path, e.to_string()))?;
    table.write_csv(std::io::BufWriter::new(file)).map_err(|e| out_err(csv_path, e.to_string()))?;
    let meta = metadata(config, table);
    let side = sidecar_path(csv_path);
    let mut json = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    json.push('\n');
    std::fs::write(&side, json).map_err(|e| out_err(&side, e.to_string()))?;
    Ok(meta)
}

/// Statistics of `magnitude_kw` for one group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub group: Vec<(String, String)>,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub p05: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p95: f64,
    /// Mean over paired rows of c(longest lead) - c(shortest lead).
    pub lead_delta: Option<f64>,
}

pub const GROUP_KEYS: [&str; 9] =
    ["date", "product", "bau", "v2g", "window_start", "window_len", "lead_h", "status", "category"];

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Groups the solved rows of `table` by `group_by` and summarizes their
/// magnitudes. Rows without a magnitude are skipped.
pub fn summarize(table: &ResultTable, group_by: &[&str]) -> Result<Vec<SummaryRow>, SweepError> {
    if let Some(k) = group_by.iter().find(|k| !GROUP_KEYS.contains(k)) {
        return Err(SweepError::Config(format!("unknown group key `{k}` (expected one of {})", GROUP_KEYS.join(", "))));
    }
    if table.is_empty() {
        return Err(SweepError::Config("result table is empty".into()));
    }
    let mut groups: BTreeMap<Vec<String>, Vec<&ResultRow>> = BTreeMap::new();
    for row in table.rows.iter().filter(|r| r.magnitude_kw.is_some()) {
        let key = group_by.iter().map(|k| row.key(k).expect("checked key")).collect();
        groups.entry(key).or_default().push(row);
    }

    Ok(groups
        .into_iter()
        .map(|(key, rows)| {
            let mut v: Vec<f64> = rows.iter().filter_map(|r| r.magnitude_kw).collect();
            v.sort_by(f64::total_cmp);
            let n = v.len();
            let mean = v.iter().sum::<f64>() / n as f64;
            let std = if n > 1 {
                (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            SummaryRow {
                group: group_by.iter().map(|k| k.to_string()).zip(key).collect(),
                count: n,
                mean,
                std,
                min: v[0],
                max: v[n - 1],
                p05: quantile(&v, 0.05),
                p25: quantile(&v, 0.25),
                p50: quantile(&v, 0.50),
                p75: quantile(&v, 0.75),
                p95: quantile(&v, 0.95),
                lead_delta: lead_delta(&rows),
            }
        })
        .collect())
}

fn lead_delta(rows: &[&ResultRow]) -> Option<f64> {
    let leads = sorted_unique_f64(&rows.iter().map(|r| r.lead_h).collect::<Vec<_>>());
    let (short, long) = (*leads.first()?, *leads.last()?);
    if short == long {
        return None;
    }
    let pair_key = |r: &ResultRow| {
        GROUP_KEYS.iter().filter(|k| **k != "lead_h" && **k != "status").map(|k| r.key(k).expect("known key")).collect::<Vec<_>>()
    };
    let mut shorts = BTreeMap::new();
    for r in rows.iter().filter(|r| r.lead_h == short) {
        shorts.insert(pair_key(r), r.magnitude_kw?);
    }
    let deltas: Vec<f64> = rows
        .iter()
        .filter(|r| r.lead_h == long)
        .filter_map(|r| Some(r.magnitude_kw? - shorts.get(&pair_key(r))?))
        .collect();
    (!deltas.is_empty()).then(|| deltas.iter().sum::<f64>() / deltas.len() as f64)
}

pub fn write_summary_csv<W: Write>(sink: W, group_by: &[&str], rows: &[SummaryRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    let mut header: Vec<String> = group_by.iter().map(|s| s.to_string()).collect();
    header.extend(
        ["count", "mean", "std", "min", "max", "p05", "p25", "p50", "p75", "p95", "lead_delta"].map(String::from),
    );
    w.write_record(&header)?;
    for r in rows {
        let mut rec: Vec<String> = r.group.iter().map(|(_, v)| v.clone()).collect();
        rec.push(r.count.to_string());
        rec.extend([r.mean, r.std, r.min, r.max, r.p05, r.p25, r.p50, r.p75, r.p95].map(fmt_num));
        rec.push(fmt_opt(r.lead_delta));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
