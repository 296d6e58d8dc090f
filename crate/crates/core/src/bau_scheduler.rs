//! Business-as-usual charging schedules.
//!
//! Three strategies share the charging polytope of [`crate::lp_core`]:
//! cost minimization on day-ahead prices, emission minimization on marginal
//! emission factors, and unoptimized charging. Unoptimized charging
//! maximizes the summed cumulative energy, which charges every vehicle as
//! soon as it is plugged in.

use std::fmt;
use std::io::Write;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid_data::{TimeGrid, Transaction};
use crate::lp_core::{self, LinearProgram, Sense, SolveStatus, VariableLayout};
use crate::signals::{Signal, SignalKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BauKind {
    Cost,
    Mef,
    Unopt,
}

impl BauKind {
    pub const ALL: [BauKind; 3] = [BauKind::Cost, BauKind::Mef, BauKind::Unopt];

    pub fn as_str(&self) -> &'static str {
        match self {
            BauKind::Cost => "cost",
            BauKind::Mef => "mef",
            BauKind::Unopt => "unopt",
        }
    }
}

impl fmt::Display for BauKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BauKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cost" | "cost_min" => Ok(BauKind::Cost),
            "mef" | "mef_min" => Ok(BauKind::Mef),
            "unopt" | "unoptimized" => Ok(BauKind::Unopt),
            other => Err(format!("unknown BAU strategy `{other}`")),
        }
    }
}

/// A BAU strategy together with the signal it optimizes.
#[derive(Debug, Clone, PartialEq)]
pub enum BauStrategy {
    CostMin(Signal),
    MefMin(Signal),
    Unoptimized,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BauError {
    #[error("strategy `{kind}` needs a {expected} signal")]
    MissingSignal { kind: BauKind, expected: SignalKind },
    #[error("strategy `{kind}` cannot use a {got} signal")]
    WrongSignal { kind: BauKind, got: SignalKind },
    #[error("signal has {got} steps but the grid has {expected}")]
    SignalLength { expected: usize, got: usize },
    #[error(transparent)]
    Horizon(#[from] lp_core::LpError),
    #[error("internal error: BAU problem {status} (offending transaction: {transaction:?}){}", .diagnostics.as_deref().map(|d| format!(": {d}")).unwrap_or_default())]
    Internal { status: &'static str, transaction: Option<u32>, diagnostics: Option<String> },
}

impl BauStrategy {
    pub fn cost_min(prices: Signal) -> Result<Self, BauError> {
        match prices.kind() {
            SignalKind::DayAheadPrice => Ok(Self::CostMin(prices)),
            got => Err(BauError::WrongSignal { kind: BauKind::Cost, got }),
        }
    }

    pub fn mef_min(mef: Signal) -> Result<Self, BauError> {
        match mef.kind() {
            SignalKind::Mef => Ok(Self::MefMin(mef)),
            got => Err(BauError::WrongSignal { kind: BauKind::Mef, got }),
        }
    }

    /// Picks the matching signal for `kind`.
    pub fn from_kind(kind: BauKind, prices: Option<&Signal>, mef: Option<&Signal>) -> Result<Self, BauError> {
        match kind {
            BauKind::Cost => Self::cost_min(
                prices.cloned().ok_or(BauError::MissingSignal { kind, expected: SignalKind::DayAheadPrice })?,
            ),
            BauKind::Mef => {
                Self::mef_min(mef.cloned().ok_or(BauError::MissingSignal { kind, expected: SignalKind::Mef })?)
            }
            BauKind::Unopt => Ok(Self::Unoptimized),
        }
    }

    pub fn kind(&self) -> BauKind {
        match self {
            BauStrategy::CostMin(_) => BauKind::Cost,
            BauStrategy::MefMin(_) => BauKind::Mef,
            BauStrategy::Unoptimized => BauKind::Unopt,
        }
    }

    pub fn signal(&self) -> Option<&Signal> {
        match self {
            BauStrategy::CostMin(s) | BauStrategy::MefMin(s) => Some(s),
            BauStrategy::Unoptimized => None,
        }
    }

    /// Direction in which the strategy's own objective is optimized.
    pub fn sense(&self) -> Sense {
        match self {
            BauStrategy::Unoptimized => Sense::Maximize,
            _ => Sense::Minimize,
        }
    }

    /// Adds `weight * f(p, e)` to `lp`, where `f` is the strategy objective:
    /// signal-weighted energy for cost/MEF, summed cumulative energy over the
    /// grid for unoptimized charging.
    pub fn add_objective(&self, lp: &mut LinearProgram, dt: f64, weight: f64) {
        let layout = lp.layout.clone();
        let n_steps = layout.n_steps();
        for n in 0..layout.n_transactions() {
            for t in 0..n_steps {
                match self.signal() {
                    Some(s) => lp.add_objective_term(layout.power(n, t), weight * s.values()[t] * dt),
                    None => lp.add_objective_term(layout.energy(n, t), weight),
                }
            }
        }
    }

    /// Evaluates the strategy objective at a schedule.
    pub fn evaluate(&self, schedule: &Schedule) -> f64 {
        match self.signal() {
            Some(s) => schedule_cost(schedule, s),
            None => schedule.energy_kwh.iter().map(|row| row[..schedule.grid.n_steps()].iter().sum::<f64>()).sum(),
        }
    }

    fn check_grid(&self, grid: &TimeGrid) -> Result<(), BauError> {
        match self.signal() {
            Some(s) if s.len() != grid.n_steps() => {
                Err(BauError::SignalLength { expected: grid.n_steps(), got: s.len() })
            }
            _ => Ok(()),
        }
    }
}

/// Per-transaction power and cumulative-energy trajectories on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    grid: TimeGrid,
    transaction_ids: Vec<u32>,
    spans: Vec<Range<usize>>,
    /// `[transaction][step]`, kW.
    power_kw: Vec<Vec<f64>>,
    /// `[transaction][0..=n_steps]`, kWh delivered before each step.
    energy_kwh: Vec<Vec<f64>>,
    strategy: BauStrategy,
}

impl Schedule {
    pub(crate) fn from_values(
        grid: &TimeGrid,
        transactions: &[Transaction],
        layout: &VariableLayout,
        values: &[f64],
        strategy: BauStrategy,
    ) -> Self {
        Self {
            grid: *grid,
            transaction_ids: transactions.iter().map(Transaction::id).collect(),
            spans: transactions.iter().map(Transaction::connected).collect(),
            power_kw: layout.power_matrix(values),
            energy_kwh: layout.energy_matrix(values),
            strategy,
        }
    }

    pub(crate) fn from_power(
        grid: &TimeGrid,
        transactions: &[Transaction],
        power_kw: Vec<Vec<f64>>,
        strategy: BauStrategy,
    ) -> Self {
        let dt = grid.dt_hours();
        let energy_kwh = transactions
            .iter()
            .zip(&power_kw)
            .map(|(tx, row)| {
                let mut e = vec![0.0; grid.n_steps() + 1];
                for t in 0..grid.n_steps() {
                    e[t + 1] = if t + 1 >= tx.depart_step() { tx.energy_kwh() } else { e[t] + row[t] * dt };
                }
                e
            })
            .collect();
        Self {
            grid: *grid,
            transaction_ids: transactions.iter().map(Transaction::id).collect(),
            spans: transactions.iter().map(Transaction::connected).collect(),
            power_kw,
            energy_kwh,
            strategy,
        }
    }

    pub fn empty(grid: &TimeGrid, strategy: BauStrategy) -> Self {
        Self {
            grid: *grid,
            transaction_ids: Vec::new(),
            spans: Vec::new(),
            power_kw: Vec::new(),
            energy_kwh: Vec::new(),
            strategy,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn transaction_ids(&self) -> &[u32] {
        &self.transaction_ids
    }

    pub fn spans(&self) -> &[Range<usize>] {
        &self.spans
    }

    pub fn power_kw(&self) -> &[Vec<f64>] {
        &self.power_kw
    }

    pub fn energy_kwh(&self) -> &[Vec<f64>] {
        &self.energy_kwh
    }

    pub fn strategy(&self) -> &BauStrategy {
        &self.strategy
    }

    pub fn len(&self) -> usize {
        self.transaction_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transaction_ids.is_empty()
    }

    /// Energy delivered to transaction `n`, summed from its power profile.
    pub fn delivered_kwh(&self, n: usize) -> f64 {
        self.power_kw[n].iter().sum::<f64>() * self.grid.dt_hours()
    }

    /// Writes `transaction_id,step,power_kw` for every connected step.
    pub fn write_csv<W: Write>(&self, sink: W) -> csv::Result<()> {
        let mut writer = csv::Writer::from_writer(sink);
        writer.write_record(["transaction_id", "step", "power_kw"])?;
        for ((id, span), row) in self.transaction_ids.iter().zip(&self.spans).zip(&self.power_kw) {
            for t in span.clone() {
                writer.write_record([id.to_string(), t.to_string(), row[t].to_string()])?;
            }
        }
        writer.flush()?;
        Ok(())
    }
}

/// Solves the BAU problem for `strategy`. An empty fleet yields an empty
/// schedule without calling the solver.
pub fn schedule_bau(transactions: &[Transaction], grid: &TimeGrid, strategy: &BauStrategy) -> Result<Schedule, BauError> {
    strategy.check_grid(grid)?;
    if transactions.is_empty() {
        return Ok(Schedule::empty(grid, strategy.clone()));
    }
    let lp = bau_program(transactions, grid, strategy)?;
    let solution = lp_core::solve(&lp);
    if solution.status != SolveStatus::Optimal {
        let transaction = if solution.status == SolveStatus::Infeasible {
            transactions.iter().find(|tx| {
                bau_program(std::slice::from_ref(*tx), grid, strategy)
                    .map(|lp| lp_core::solve(&lp).status == SolveStatus::Infeasible)
                    .unwrap_or(false)
            })
        } else {
            None
        };
        return Err(BauError::Internal {
            status: solution.status.as_str(),
            transaction: transaction.map(Transaction::id),
            diagnostics: solution.diagnostics,
        });
    }
    Ok(Schedule::from_values(grid, transactions, &lp.layout, &solution.values, strategy.clone()))
}

/// The BAU linear program, exposed for LP dumps and cross-checks.
pub fn bau_program(transactions: &[Transaction], grid: &TimeGrid, strategy: &BauStrategy) -> Result<LinearProgram, BauError> {
    strategy.check_grid(grid)?;
    let mut lp = lp_core::build_feasibility(transactions, grid)?;
    lp.sense = strategy.sense();
    strategy.add_objective(&mut lp, grid.dt_hours(), 1.0);
    Ok(lp)
}

/// Total power of the fleet per step.
pub fn aggregate_profile(schedule: &Schedule) -> Vec<f64> {
    let mut total = vec![0.0; schedule.grid.n_steps()];
    for row in &schedule.power_kw {
        for (acc, p) in total.iter_mut().zip(row) {
            *acc += p;
        }
    }
    total
}

/// `sum_t sum_n signal[t] * p[n][t] * dt` (EUR or kgCO2).
pub fn schedule_cost(schedule: &Schedule, signal: &Signal) -> f64 {
    let dt = schedule.grid.dt_hours();
    schedule
        .power_kw
        .iter()
        .map(|row| row.iter().zip(signal.values()).map(|(p, s)| p * s).sum::<f64>() * dt)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_data::Category;
    use chrono::NaiveDate;

    fn grid() -> TimeGrid {
        TimeGrid::for_sample_day(NaiveDate::from_ymd_opt(2023, 9, 14).unwrap())
    }

    fn prices(g: &TimeGrid, at: usize, steps: &[f64]) -> Signal {
        let mut v = vec![1.0; g.n_steps()];
        v[at..at + steps.len()].copy_from_slice(steps);
        Signal::new(SignalKind::DayAheadPrice, v).unwrap()
    }

    fn ev(id: u32, arrive: usize, len: usize, energy: f64, v2g: bool) -> Transaction {
        Transaction::new(id, Category::Residential, arrive, arrive + len, energy, 11.0, v2g).unwrap()
    }

    #[test]
    fn cost_min_charges_in_cheapest_step() {
        let g = grid();
        let sig = prices(&g, 100, &[0.1, 0.2, 0.3, 0.4]);
        let s = schedule_bau(&[ev(0, 100, 4, 2.75, false)], &g, &BauStrategy::cost_min(sig.clone()).unwrap()).unwrap();
        assert_eq!(&s.power_kw()[0][100..104], &[11.0, 0.0, 0.0, 0.0]);
        assert!((schedule_cost(&s, &sig) - 0.275).abs() < 1e-12);
    }

    #[test]
    fn unoptimized_charges_immediately() {
        let g = grid();
        let s = schedule_bau(&[ev(0, 100, 4, 2.75, false)], &g, &BauStrategy::Unoptimized).unwrap();
        assert_eq!(&s.power_kw()[0][100..104], &[11.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn constant_price_makes_every_schedule_cost_the_same() {
        let g = grid();
        let sig = Signal::constant(SignalKind::DayAheadPrice, 0.3, &g).unwrap();
        let fleet = [ev(0, 100, 10, 7.0, false), ev(1, 104, 12, 3.0, true)];
        let s = schedule_bau(&fleet, &g, &BauStrategy::cost_min(sig.clone()).unwrap()).unwrap();
        assert!((schedule_cost(&s, &sig) - 10.0 * 0.3).abs() < 1e-9);
    }

    #[test]
    fn aggregate_sums_transactions() {
        let g = grid();
        let one = schedule_bau(&[ev(0, 100, 4, 2.75, false)], &g, &BauStrategy::Unoptimized).unwrap();
        assert_eq!(aggregate_profile(&one), one.power_kw()[0]);
        let two = schedule_bau(&[ev(0, 100, 4, 2.75, false), ev(1, 100, 4, 2.75, false)], &g, &BauStrategy::Unoptimized)
            .unwrap();
        let doubled: Vec<f64> = one.power_kw()[0].iter().map(|p| 2.0 * p).collect();
        assert_eq!(aggregate_profile(&two), doubled);
    }

    #[test]
    fn empty_fleet_is_empty_schedule() {
        let g = grid();
        let s = schedule_bau(&[], &g, &BauStrategy::Unoptimized).unwrap();
        assert!(s.is_empty());
        assert!(aggregate_profile(&s).iter().all(|&p| p == 0.0));
        let sig = Signal::constant(SignalKind::DayAheadPrice, 0.3, &g).unwrap();
        assert_eq!(schedule_cost(&s, &sig), 0.0);
    }

    #[test]
    fn cost_of_one_full_power_step() {
        let g = grid();
        let sig = Signal::constant(SignalKind::DayAheadPrice, 0.1, &g).unwrap();
        let mut power = vec![vec![0.0; g.n_steps()]];
        power[0][100] = 11.0;
        let s = Schedule::from_power(&g, &[ev(0, 100, 4, 2.75, false)], power, BauStrategy::Unoptimized);
        assert!((schedule_cost(&s, &sig) - 0.275).abs() < 1e-15);
    }

    #[test]
    fn v2g_arbitrage_lowers_cost() {
        let g = grid();
        let sig = prices(&g, 100, &[0.05, 0.05, 0.5, 0.5, 0.05, 0.05]);
        let fleet = |v2g| [ev(0, 100, 6, 5.5, v2g), ev(1, 100, 6, 2.75, v2g)];
        let strategy = BauStrategy::cost_min(sig.clone()).unwrap();
        let uni = schedule_bau(&fleet(false), &g, &strategy).unwrap();
        let bi = schedule_bau(&fleet(true), &g, &strategy).unwrap();
        assert!(schedule_cost(&bi, &sig) < schedule_cost(&uni, &sig) - 1e-6);
        for n in 0..2 {
            assert!((bi.delivered_kwh(n) - fleet(true)[n].energy_kwh()).abs() < 1e-6);
            assert!(bi.energy_kwh()[n].iter().all(|&e| e >= -1e-9 && e <= fleet(true)[n].energy_kwh() + 1e-9));
        }
    }

    #[test]
    fn missing_signal_is_a_configuration_error() {
        let err = BauStrategy::from_kind(BauKind::Mef, None, None).unwrap_err();
        assert_eq!(err, BauError::MissingSignal { kind: BauKind::Mef, expected: SignalKind::Mef });
        let g = grid();
        let price = Signal::constant(SignalKind::DayAheadPrice, 0.1, &g).unwrap();
        assert!(matches!(BauStrategy::mef_min(price), Err(BauError::WrongSignal { .. })));
    }

    #[test]
    fn schedule_csv_lists_connected_steps() {
        let g = grid();
        let s = schedule_bau(&[ev(9, 100, 2, 2.75, false)], &g, &BauStrategy::Unoptimized).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "transaction_id,step,power_kw\n9,100,11\n9,101,0\n");
    }
}
