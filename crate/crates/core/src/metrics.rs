//! Hour-of-day cost averages and daily peak statistics over many schedules.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::NaiveDate;
use serde::Serialize;
use thiserror::Error;

use crate::bau_scheduler::{aggregate_profile, Schedule};
use crate::signals::Signal;

/// Hours whose absolute net energy is below this are reported as absent.
pub const MIN_HOUR_ENERGY_KWH: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("no BAU schedule for {0}")]
    Unpaired(NaiveDate),
    #[error("two schedules for {0}")]
    Duplicate(NaiveDate),
    #[error("schedules for {0} cover different transactions")]
    Mismatch(NaiveDate),
}

/// Cost and net energy per hour of day, summed over schedules.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HourlyCosts {
    pub cost: [f64; 24],
    pub energy_kwh: [f64; 24],
}

impl HourlyCosts {
    pub fn add(&mut self, schedule: &Schedule, signal: &Signal) {
        let grid = schedule.grid();
        let dt = grid.dt_hours();
        let total = aggregate_profile(schedule);
        for (t, (p, price)) in total.iter().zip(signal.values()).enumerate() {
            let h = grid.hour_of_day(t) as usize;
            self.energy_kwh[h] += p * dt;
            self.cost[h] += p * dt * price;
        }
    }

    /// Average cost per kWh in hour `h`, `None` when no energy flowed.
    pub fn average(&self, h: usize) -> Option<f64> {
        (self.energy_kwh[h].abs() > MIN_HOUR_ENERGY_KWH).then(|| self.cost[h] / self.energy_kwh[h])
    }

    pub fn table(&self) -> HourlyTable {
        HourlyTable((0..24).filter_map(|h| self.average(h).map(|v| (h as u32, v))).collect())
    }

    pub fn total_cost(&self) -> f64 {
        self.cost.iter().sum()
    }

    pub fn total_energy_kwh(&self) -> f64 {
        self.energy_kwh.iter().sum()
    }

    /// Total cost over total energy.
    pub fn overall_average(&self) -> Option<f64> {
        let e = self.total_energy_kwh();
        (e.abs() > MIN_HOUR_ENERGY_KWH).then(|| self.total_cost() / e)
    }
}

/// `(hour, value)` rows in hour order; missing hours had no energy.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct HourlyTable(pub Vec<(u32, f64)>);

impl HourlyTable {
    pub fn get(&self, hour: u32) -> Option<f64> {
        self.0.iter().find(|(h, _)| *h == hour).map(|(_, v)| *v)
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["hour", "value"])?;
        for (h, v) in &self.0 {
            w.write_record([h.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn hourly_costs<'a>(days: impl IntoIterator<Item = (&'a Schedule, &'a Signal)>) -> HourlyCosts {
    let mut acc = HourlyCosts::default();
    for (schedule, signal) in days {
        acc.add(schedule, signal);
    }
    acc
}

/// Energy-weighted average price per hour of day, in signal units per kWh.
///
/// Costs are booked in the hour the energy flows.
pub fn hourly_avg_cost<'a>(days: impl IntoIterator<Item = (&'a Schedule, &'a Signal)>) -> HourlyTable {
    hourly_costs(days).table()
}

/// Hourly average cost of the adjusted schedules minus that of their BAU
/// counterparts. Schedules are paired by sample date.
pub fn cost_increase_after_flex(
    bau: &[(&Schedule, &Signal)],
    adjusted: &[&Schedule],
) -> Result<HourlyTable, MetricsError> {
    let mut by_date: BTreeMap<NaiveDate, (&Schedule, &Signal)> = BTreeMap::new();
    for (s, sig) in bau {
        let date = s.grid().anchor_date();
        if by_date.insert(date, (s, sig)).is_some() {
            return Err(MetricsError::Duplicate(date));
        }
    }
    let mut seen = BTreeMap::new();
    let mut before = HourlyCosts::default();
    let mut after = HourlyCosts::default();
    for s in adjusted {
        let date = s.grid().anchor_date();
        let (b, sig) = by_date.get(&date).ok_or(MetricsError::Unpaired(date))?;
        if seen.insert(date, ()).is_some() {
            return Err(MetricsError::Duplicate(date));
        }
        if b.transaction_ids() != s.transaction_ids() {
            return Err(MetricsError::Mismatch(date));
        }
        before.add(b, sig);
        after.add(s, sig);
    }
    if let Some(date) = by_date.keys().find(|d| !seen.contains_key(d)) {
        return Err(MetricsError::Unpaired(*date));
    }
    Ok(HourlyTable(
        (0..24)
            .filter_map(|h| Some((h as u32, after.average(h)? - before.average(h)?)))
            .collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DailyPeak {
    pub date: NaiveDate,
    pub peak_kw: f64,
    pub hour: u32,
}

/// Peak aggregate power on each schedule's sample date and its hour of day.
/// Ties go to the earliest step.
pub fn daily_peak_by_hour(schedules: &[&Schedule]) -> Vec<DailyPeak> {
    schedules
        .iter()
        .map(|s| {
            let grid = s.grid();
            let total = aggregate_profile(s);
            let mut best = grid.anchor_steps().start;
            for t in grid.anchor_steps() {
                if total[t] > total[best] {
                    best = t;
                }
            }
            DailyPeak { date: grid.anchor_date(), peak_kw: total[best], hour: grid.hour_of_day(best) }
        })
        .collect()
}

pub fn write_peaks_csv<W: Write>(sink: W, peaks: &[DailyPeak]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["date", "peak_kw", "hour"])?;
    for p in peaks {
        w.write_record([p.date.to_string(), p.peak_kw.to_string(), p.hour.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
