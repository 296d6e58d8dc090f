//! Seeded synthetic charging sessions and price/MEF series.
//!
//! All distribution parameters here are invented placeholders chosen to give
//! each station category a recognisable daily rhythm. They are not fitted to
//! any real dataset and live in config, not in the model code.

use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, NaiveTime};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{LogNormal, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid_data::{Category, RawTransaction};
use crate::signals::{SignalError, SignalKind, SignalSeries};

/// Connectors per charging station.
pub const CONNECTORS_PER_STATION: usize = 2;

/// Station shares used by [`default_mix`]: residential, commercial, shared.
pub const CATEGORY_SHARES: [(Category, f64); 3] =
    [(Category::Residential, 0.576), (Category::Commercial, 0.31), (Category::Shared, 0.114)];

// Rounding both ends to the nearest 15 min can shorten a session by at most
// one step; generated energy leaves that step plus some slack unused.
const ROUNDING_LOSS_HOURS: f64 = 0.25;
const ENERGY_HEADROOM: f64 = 0.95;
const MAX_RESAMPLES: usize = 64;

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid fleet spec: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("invalid fleet spec: {0}")]
    Invalid(String),
}

/// Truncated lognormal, parameterized by its untruncated median.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncLogNormal {
    pub median: f64,
    pub sigma: f64,
    pub min: f64,
    pub max: f64,
}

impl TruncLogNormal {
    fn validate(&self, what: &str) -> Result<(), SpecError> {
        let ok = self.median > 0.0
            && self.sigma >= 0.0
            && self.min > 0.0
            && self.min <= self.max
            && [self.median, self.sigma, self.min, self.max].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(SpecError::Invalid(format!("{what}: need 0 < min <= max, median > 0, sigma >= 0")))
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let dist = LogNormal::new(self.median.ln(), self.sigma).expect("validated parameters");
        for _ in 0..MAX_RESAMPLES {
            let x = dist.sample(rng);
            if (self.min..=self.max).contains(&x) {
                return x;
            }
        }
        self.median.clamp(self.min, self.max)
    }
}

/// Generator settings for one station category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetSpec {
    pub category: Category,
    pub n_stations: usize,
    pub start_date: NaiveDate,
    /// Inclusive.
    pub end_date: NaiveDate,
    pub seed: u64,
    /// Expected arrivals per station and day.
    pub sessions_per_day: f64,
    /// Relative arrival weight per hour of day (24 values).
    pub arrival_weights: Vec<f64>,
    pub connection_hours: TruncLogNormal,
    pub energy_kwh: TruncLogNormal,
    pub p_max_kw: Vec<f64>,
    pub p_max_weights: Vec<f64>,
}

/// On-disk form: everything except the category is optional and falls back
/// to the category defaults.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FleetSpecFile {
    category: Category,
    n_stations: Option<usize>,
    start_date: NaiveDate,
    end_date: Option<NaiveDate>,
    seed: Option<u64>,
    sessions_per_day: Option<f64>,
    arrival_weights: Option<Vec<f64>>,
    connection_hours: Option<TruncLogNormal>,
    energy_kwh: Option<TruncLogNormal>,
    p_max_kw: Option<Vec<f64>>,
    p_max_weights: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FleetFile {
    fleet: Vec<FleetSpecFile>,
}

fn bump(hour: f64, center: f64, width: f64) -> f64 {
    let d = (hour - center).abs().min(24.0 - (hour - center).abs());
    (-0.5 * (d / width).powi(2)).exp()
}

impl FleetSpec {
    /// Category defaults over a single day.
    pub fn defaults(category: Category, start_date: NaiveDate) -> Self {
        let hours = (0..24).map(|h| h as f64 + 0.5);
        match category {
            Category::Residential => Self {
                category,
                n_stations: 60,
                start_date,
                end_date: start_date,
                seed: 0,
                sessions_per_day: 0.8,
                arrival_weights: hours.map(|h| 0.03 + bump(h, 18.5, 1.6)).collect(),
                connection_hours: TruncLogNormal { median: 12.0, sigma: 0.35, min: 2.0, max: 24.0 },
                energy_kwh: TruncLogNormal { median: 11.0, sigma: 0.55, min: 1.0, max: 60.0 },
                p_max_kw: vec![3.7, 7.4, 11.0],
                p_max_weights: vec![0.2, 0.35, 0.45],
            },
            Category::Commercial => Self {
                category,
                n_stations: 30,
                start_date,
                end_date: start_date,
                seed: 0,
                sessions_per_day: 1.0,
                arrival_weights: hours.map(|h| 0.02 + bump(h, 8.5, 1.3) + 0.25 * bump(h, 13.0, 1.5)).collect(),
                connection_hours: TruncLogNormal { median: 7.5, sigma: 0.3, min: 1.0, max: 14.0 },
                energy_kwh: TruncLogNormal { median: 10.0, sigma: 0.5, min: 1.0, max: 50.0 },
                p_max_kw: vec![11.0, 22.0],
                p_max_weights: vec![0.7, 0.3],
            },
            Category::Shared => Self {
                category,
                n_stations: 12,
                start_date,
                end_date: start_date,
                seed: 0,
                sessions_per_day: 2.5,
                arrival_weights: hours.map(|h| 0.05 + bump(h, 14.0, 4.5)).collect(),
                connection_hours: TruncLogNormal { median: 2.5, sigma: 0.6, min: 0.75, max: 12.0 },
                energy_kwh: TruncLogNormal { median: 8.0, sigma: 0.6, min: 0.5, max: 40.0 },
                p_max_kw: vec![11.0, 22.0],
                p_max_weights: vec![0.6, 0.4],
            },
        }
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        let bad = |m: &str| Err(SpecError::Invalid(m.to_string()));
        if self.end_date < self.start_date {
            return bad("end_date precedes start_date");
        }
        if !(self.sessions_per_day.is_finite() && self.sessions_per_day >= 0.0) {
            return bad("sessions_per_day must be finite and non-negative");
        }
        if self.arrival_weights.len() != 24
            || self.arrival_weights.iter().any(|w| !w.is_finite() || *w < 0.0)
            || self.arrival_weights.iter().sum::<f64>() <= 0.0
        {
            return bad("arrival_weights needs 24 non-negative values with a positive sum");
        }
        self.connection_hours.validate("connection_hours")?;
        self.energy_kwh.validate("energy_kwh")?;
        if self.connection_hours.max > 24.0 || self.connection_hours.min < 0.75 {
            return bad("connection_hours must stay within [0.75, 24]");
        }
        if self.p_max_kw.is_empty() || self.p_max_kw.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return bad("p_max_kw needs positive values");
        }
        if self.p_max_weights.len() != self.p_max_kw.len()
            || self.p_max_weights.iter().any(|w| !w.is_finite() || *w < 0.0)
            || self.p_max_weights.iter().sum::<f64>() <= 0.0
        {
            return bad("p_max_weights must match p_max_kw and have a positive sum");
        }
        Ok(())
    }

    pub fn days(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.start_date.iter_days().take_while(move |d| *d <= self.end_date)
    }

    fn from_file(f: FleetSpecFile) -> Result<Self, SpecError> {
        let d = Self::defaults(f.category, f.start_date);
        let spec = Self {
            category: f.category,
            n_stations: f.n_stations.unwrap_or(d.n_stations),
            start_date: f.start_date,
            end_date: f.end_date.unwrap_or(f.start_date),
            seed: f.seed.unwrap_or(d.seed),
            sessions_per_day: f.sessions_per_day.unwrap_or(d.sessions_per_day),
            arrival_weights: f.arrival_weights.unwrap_or(d.arrival_weights),
            connection_hours: f.connection_hours.unwrap_or(d.connection_hours),
            energy_kwh: f.energy_kwh.unwrap_or(d.energy_kwh),
            p_max_weights: match (&f.p_max_kw, f.p_max_weights) {
                (_, Some(w)) => w,
                (Some(p), None) => vec![1.0; p.len()],
                (None, None) => d.p_max_weights,
            },
            p_max_kw: f.p_max_kw.unwrap_or(d.p_max_kw),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Parses a fleet spec: either one top-level spec or several `[[fleet]]`
/// tables, one per category.
pub fn parse_fleet_specs(text: &str) -> Result<Vec<FleetSpec>, SpecError> {
    let value: toml::Table = toml::from_str(text)?;
    let files = if value.contains_key("fleet") {
        toml::from_str::<FleetFile>(text)?.fleet
    } else {
        vec![toml::from_str::<FleetSpecFile>(text)?]
    };
    files.into_iter().map(FleetSpec::from_file).collect()
}

pub fn load_fleet_specs(path: &Path) -> Result<Vec<FleetSpec>, SpecError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| SpecError::Io { path: path.display().to_string(), source })?;
    parse_fleet_specs(&text)
}

/// Splits `n_stations` over the three categories by the default shares.
pub fn default_mix(n_stations: usize, start_date: NaiveDate, end_date: NaiveDate, seed: u64) -> Vec<FleetSpec> {
    let mut left = n_stations;
    CATEGORY_SHARES
        .iter()
        .enumerate()
        .map(|(i, &(category, share))| {
            let n = if i + 1 == CATEGORY_SHARES.len() { left } else { ((n_stations as f64) * share).round() as usize };
            let n = n.min(left);
            left -= n;
            FleetSpec { n_stations: n, end_date, seed, ..FleetSpec::defaults(category, start_date) }
        })
        .collect()
}

fn station_prefix(category: Category) -> &'static str {
    match category {
        Category::Residential => "res",
        Category::Commercial => "com",
        Category::Shared => "shr",
    }
}

fn category_salt(category: Category) -> u64 {
    match category {
        Category::Residential => 0x5245_5349,
        Category::Commercial => 0x434f_4d4d,
        Category::Shared => 0x5348_4152,
    }
}

fn station_sessions(spec: &FleetSpec, station: usize) -> Vec<RawTransaction> {
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed ^ category_salt(spec.category));
    rng.set_stream(station as u64);

    let hour_dist = WeightedIndex::new(&spec.arrival_weights).expect("validated weights");
    let power_dist = WeightedIndex::new(&spec.p_max_weights).expect("validated weights");
    let count_dist = (spec.sessions_per_day > 0.0).then(|| Poisson::new(spec.sessions_per_day).expect("positive rate"));
    let station_id = format!("{}-{:04}", station_prefix(spec.category), station);

    let mut arrivals: Vec<NaiveDateTime> = Vec::new();
    for day in spec.days() {
        let count = count_dist.as_ref().map_or(0, |d| d.sample(&mut rng) as usize);
        for _ in 0..count {
            let hour = hour_dist.sample(&mut rng) as u32;
            let second = rng.random_range(0..3600u32);
            let time = NaiveTime::from_hms_opt(hour, second / 60, second % 60).expect("valid time");
            arrivals.push(day.and_time(time));
        }
    }
    arrivals.sort();

    // Each session is drawn in arrival order; it takes a free connector or is
    // dropped, so no station ever hosts more than two sessions at once.
    let mut free_at = [NaiveDateTime::MIN; CONNECTORS_PER_STATION];
    let mut sessions = Vec::new();
    for arrival in arrivals {
        let hours = spec.connection_hours.sample(&mut rng);
        let energy = spec.energy_kwh.sample(&mut rng);
        let p_max = spec.p_max_kw[power_dist.sample(&mut rng)];
        let Some(slot) = free_at.iter().position(|t| *t <= arrival) else {
            continue;
        };
        let departure = arrival + Duration::seconds((hours * 3600.0).round() as i64);
        free_at[slot] = departure;
        let usable = (hours.min(24.0) - ROUNDING_LOSS_HOURS).max(0.0);
        let energy = energy.min(ENERGY_HEADROOM * p_max * usable);
        sessions.push(RawTransaction {
            station_id: station_id.clone(),
            category: spec.category,
            arrival,
            departure,
            energy_kwh: (energy * 1000.0).floor() / 1000.0,
            max_power_kw: p_max,
        });
    }
    sessions
}

/// Generates the sessions for one spec, sorted by arrival then station.
pub fn generate(spec: &FleetSpec) -> Vec<RawTransaction> {
    let mut out: Vec<RawTransaction> =
        (0..spec.n_stations).into_par_iter().flat_map_iter(|s| station_sessions(spec, s)).collect();
    out.sort_by(|a, b| (a.arrival, &a.station_id, a.departure).cmp(&(b.arrival, &b.station_id, b.departure)));
    out
}

/// Generates several specs into one sorted list.
pub fn generate_all(specs: &[FleetSpec]) -> Vec<RawTransaction> {
    let mut out: Vec<RawTransaction> = specs.iter().flat_map(generate).collect();
    out.sort_by(|a, b| (a.arrival, &a.station_id, a.departure).cmp(&(b.arrival, &b.station_id, b.departure)));
    out
}

/// Largest number of simultaneously connected sessions per station.
pub fn max_concurrency(sessions: &[RawTransaction]) -> usize {
    let mut by_station: std::collections::BTreeMap<&str, Vec<(NaiveDateTime, i32)>> = Default::default();
    for s in sessions {
        let ev = by_station.entry(&s.station_id).or_default();
        ev.push((s.arrival, 1));
        ev.push((s.departure, -1));
    }
    by_station
        .into_values()
        .map(|mut ev| {
            // Departures sort before arrivals at the same instant.
            ev.sort();
            ev.iter()
                .scan(0i32, |open, (_, d)| {
                    *open += d;
                    Some(*open)
                })
                .max()
                .unwrap_or(0) as usize
        })
        .max()
        .unwrap_or(0)
}

/// Generator settings for hourly price and MEF series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalSpec {
    pub seed: u64,
    /// EUR/kWh.
    pub price_base: f64,
    pub price_noise: f64,
    /// kgCO2/kWh.
    pub mef_base: f64,
    pub mef_noise: f64,
}

impl Default for SignalSpec {
    fn default() -> Self {
        Self { seed: 0, price_base: 0.11, price_noise: 0.012, mef_base: 0.42, mef_noise: 0.03 }
    }
}

/// Hourly price and MEF series covering every 3-day horizon anchored on a
/// date in `start..=end`.
///
/// Price has morning and evening peaks, a solar dip that deepens in summer
/// and cheaper weekends; MEF follows a different shape so cost-minimal and
/// emission-minimal schedules disagree.
pub fn generate_signals(start: NaiveDate, end: NaiveDate, spec: &SignalSpec) -> Result<(SignalSeries, SignalSeries), SignalError> {
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let price_noise = Normal::new(0.0, spec.price_noise.max(0.0)).expect("finite sigma");
    let mef_noise = Normal::new(0.0, spec.mef_noise.max(0.0)).expect("finite sigma");
    let first = start - Duration::days(1);
    let last = end + Duration::days(2);

    let mut prices = Vec::new();
    let mut mef = Vec::new();
    let (mut ar_p, mut ar_m) = (0.0f64, 0.0f64);
    for day in first.iter_days().take_while(|d| *d < last) {
        let doy = day.ordinal0() as f64 / 365.0;
        let summer = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * doy).cos();
        let weekend = day.weekday().number_from_monday() >= 6;
        for hour in 0..24u32 {
            let h = hour as f64 + 0.5;
            ar_p = 0.7 * ar_p + price_noise.sample(&mut rng);
            ar_m = 0.6 * ar_m + mef_noise.sample(&mut rng);
            let solar = bump(h, 13.0, 2.5) * (0.4 + 0.6 * summer);
            let p = spec.price_base + 0.035 * bump(h, 8.0, 1.5) + 0.06 * bump(h, 19.0, 2.0) - 0.07 * solar
                + 0.02 * (1.0 - summer)
                - if weekend { 0.015 } else { 0.0 }
                + ar_p;
            let m = spec.mef_base + 0.09 * bump(h, 20.0, 3.0) - 0.12 * solar + 0.05 * bump(h, 3.0, 3.0) + ar_m;
            let ts = day.and_hms_opt(hour, 0, 0).expect("valid hour");
            prices.push((ts, (p * 1e5).round() / 1e5));
            mef.push((ts, (m.max(0.05) * 1e5).round() / 1e5));
        }
    }
    Ok((
        SignalSeries::from_points(SignalKind::DayAheadPrice, prices)?,
        SignalSeries::from_points(SignalKind::Mef, mef)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_data::{ingest_sample_day, TimeGrid};
    use chrono::Timelike;

    fn day(m: u32, d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2023, m, d).unwrap()
    }

    #[test]
    fn same_seed_same_sessions() {
        let spec = FleetSpec { n_stations: 20, end_date: day(3, 10), seed: 9, ..FleetSpec::defaults(Category::Shared, day(3, 1)) };
        assert_eq!(generate(&spec), generate(&spec));
        let other = FleetSpec { seed: 10, ..spec.clone() };
        assert_ne!(generate(&spec), generate(&other));
    }

    #[test]
    fn no_stations_no_sessions() {
        let spec = FleetSpec { n_stations: 0, ..FleetSpec::defaults(Category::Residential, day(1, 1)) };
        assert!(generate(&spec).is_empty());
    }

    #[test]
    fn residential_arrivals_cluster_in_evening() {
        let spec = FleetSpec { n_stations: 100, end_date: day(1, 20), seed: 1, ..FleetSpec::defaults(Category::Residential, day(1, 1)) };
        let sessions = generate(&spec);
        assert!(sessions.len() >= 1000, "{}", sessions.len());
        let evening = sessions.iter().filter(|s| (16..22).contains(&s.arrival.hour())).count();
        assert!(evening as f64 / sessions.len() as f64 > 0.6);
    }

    #[test]
    fn commercial_arrivals_cluster_in_morning() {
        let spec = FleetSpec { n_stations: 50, end_date: day(1, 10), seed: 1, ..FleetSpec::defaults(Category::Commercial, day(1, 1)) };
        let sessions = generate(&spec);
        let morning = sessions.iter().filter(|s| (6..11).contains(&s.arrival.hour())).count();
        assert!(morning * 2 > sessions.len());
    }

    #[test]
    fn two_connectors_per_station() {
        let spec = FleetSpec {
            n_stations: 10,
            end_date: day(2, 28),
            sessions_per_day: 4.0,
            ..FleetSpec::defaults(Category::Residential, day(2, 1))
        };
        let sessions = generate(&spec);
        assert_eq!(max_concurrency(&sessions), 2);
    }

    #[test]
    fn sessions_survive_discretization() {
        let specs = default_mix(80, day(5, 1), day(5, 7), 3);
        let sessions = generate_all(&specs);
        let grid = TimeGrid::for_sample_day(day(5, 4));
        let on_grid: Vec<RawTransaction> = sessions
            .into_iter()
            .filter(|s| s.arrival >= grid.start() && s.departure < grid.end())
            .collect();
        let fleet = ingest_sample_day(&on_grid, &grid, false);
        assert!(!fleet.transactions.is_empty());
        assert!(fleet.excluded.is_empty());
    }

    #[test]
    fn default_mix_follows_shares() {
        let specs = default_mix(1000, day(1, 1), day(1, 1), 0);
        let n: Vec<usize> = specs.iter().map(|s| s.n_stations).collect();
        assert_eq!(n, vec![576, 310, 114]);
        assert_eq!(default_mix(1, day(1, 1), day(1, 1), 0).iter().map(|s| s.n_stations).sum::<usize>(), 1);
    }

    #[test]
    fn spec_file_fills_category_defaults() {
        let specs = parse_fleet_specs(
            r#"
            category = "commercial"
            n_stations = 5
            start_date = "2023-04-01"
            end_date = "2023-04-03"
            seed = 11
            p_max_kw = [11.0]
            "#,
        )
        .unwrap();
        assert_eq!(specs.len(), 1);
        assert_eq!(specs[0].p_max_weights, vec![1.0]);
        assert_eq!(specs[0].arrival_weights.len(), 24);

        let specs = parse_fleet_specs(
            r#"
            [[fleet]]
            category = "residential"
            start_date = "2023-04-01"
            [[fleet]]
            category = "shared"
            start_date = "2023-04-01"
            [fleet.connection_hours]
            median = 3.0
            sigma = 0.2
            min = 1.0
            max = 6.0
            "#,
        )
        .unwrap();
        assert_eq!(specs.len(), 2);
        assert_eq!(specs[1].connection_hours.max, 6.0);
    }

    #[test]
    fn spec_file_rejects_bad_values() {
        for text in [
            "category = \"shared\"\nstart_date = \"2023-01-02\"\nend_date = \"2023-01-01\"",
            "category = \"shared\"\nstart_date = \"2023-01-02\"\narrival_weights = [1.0]",
            "category = \"shared\"\nstart_date = \"2023-01-02\"\nbogus = 1",
            "category = \"shared\"\nstart_date = \"2023-01-02\"\n[connection_hours]\nmedian = 30.0\nsigma = 0.1\nmin = 1.0\nmax = 30.0",
        ] {
            assert!(parse_fleet_specs(text).is_err(), "{text}");
        }
    }

    #[test]
    fn signals_cover_every_horizon() {
        let (price, mef) = generate_signals(day(1, 1), day(1, 5), &SignalSpec::default()).unwrap();
        assert_eq!(price.resolution_minutes(), 60);
        for d in day(1, 1).iter_days().take(5) {
            let grid = TimeGrid::for_sample_day(d);
            assert_eq!(price.align(&grid).unwrap().len(), 288);
            assert!(mef.align(&grid).unwrap().values().iter().all(|v| *v >= 0.0));
        }
        let again = generate_signals(day(1, 1), day(1, 5), &SignalSpec::default()).unwrap();
        assert_eq!(again.0, price);
    }
}
