//! Test-side helpers: tiny random instances and independent objective
//! functions for the exhaustive oracle.

#![allow(dead_code)]

use chrono::NaiveDate;
use flexcast::bau_scheduler::{schedule_bau, BauKind, BauStrategy, Schedule};
use flexcast::flex_products::{freeze_step, solve_product, Accounting, FlexOptions, FlexRequest, Product};
use flexcast::grid_data::{Category, TimeGrid, Transaction};
use flexcast::lp_core::{brute_force_oracle, Sense};
use flexcast::signals::{Signal, SignalKind};
use rand::Rng;

pub const LEVELS: usize = 4;
pub const SLACK: f64 = 1e-7;

pub fn grid() -> TimeGrid {
    TimeGrid::for_sample_day(NaiveDate::from_ymd_opt(2023, 7, 14).unwrap())
}

/// Lattice spacing of a session's power.
pub fn lattice_step(tx: &Transaction) -> f64 {
    (tx.p_max_kw() - tx.p_min_kw()) / LEVELS as f64
}

pub struct Tiny {
    pub grid: TimeGrid,
    pub txs: Vec<Transaction>,
    pub prices: Signal,
    pub mef: Signal,
}

/// One or two sessions inside eight consecutive steps of the sample day,
/// with energies the power lattice can hit exactly.
pub fn tiny_instance<R: Rng>(rng: &mut R, v2g: bool) -> Tiny {
    let grid = grid();
    let base = 150;
    let n = if rng.random_bool(0.7) { 2 } else { 1 };
    let mut txs = Vec::new();
    while txs.len() < n {
        let arrive = base + rng.random_range(0..4);
        let len = rng.random_range(1..=4);
        let p_max = [3.7, 7.4, 11.0][rng.random_range(0..3)];
        let p_min = if v2g { -p_max } else { 0.0 };
        let h = (p_max - p_min) / LEVELS as f64;
        let max_units = ((p_max * len as f64) / h).round() as usize;
        let units = rng.random_range(1..=max_units);
        let energy = units as f64 * h * grid.dt_hours();
        if let Ok(tx) = Transaction::new(txs.len() as u32, Category::Shared, arrive, arrive + len, energy, p_max, v2g) {
            txs.push(tx);
        }
    }
    let prices = Signal::new(SignalKind::DayAheadPrice, (0..grid.n_steps()).map(|_| rng.random_range(-0.05..0.3)).collect())
        .unwrap();
    let mef = Signal::new(SignalKind::Mef, (0..grid.n_steps()).map(|_| rng.random_range(0.0..0.6)).collect()).unwrap();
    Tiny { grid, txs, prices, mef }
}

pub fn signal_cost(power: &[Vec<f64>], signal: &Signal, dt: f64) -> f64 {
    power.iter().map(|row| row.iter().zip(signal.values()).map(|(p, s)| p * s * dt).sum::<f64>()).sum()
}

/// Sum over all grid steps of the energy delivered before each step.
pub fn energy_area(power: &[Vec<f64>], txs: &[Transaction], n_steps: usize, dt: f64) -> f64 {
    let mut total = 0.0;
    for (row, tx) in power.iter().zip(txs) {
        let mut e = 0.0;
        for t in 0..n_steps {
            if t >= tx.depart_step() {
                e = tx.energy_kwh();
            }
            total += e;
            if tx.connected().contains(&t) {
                e += row[t] * dt;
            }
        }
    }
    total
}

pub fn aggregate(power: &[Vec<f64>], t: usize) -> f64 {
    power.iter().map(|row| row[t]).sum()
}

pub fn strategy_for(kind: BauKind, inst: &Tiny) -> BauStrategy {
    BauStrategy::from_kind(kind, Some(&inst.prices), Some(&inst.mef)).unwrap()
}

/// Strategy objective of a dense power matrix, matching the LP's scoring.
pub fn strategy_objective(kind: BauKind, inst: &Tiny, power: &[Vec<f64>]) -> f64 {
    let dt = inst.grid.dt_hours();
    match kind {
        BauKind::Cost => signal_cost(power, &inst.prices, dt),
        BauKind::Mef => signal_cost(power, &inst.mef, dt),
        BauKind::Unopt => energy_area(power, &inst.txs, inst.grid.n_steps(), dt),
    }
}

/// Worst objective change from snapping an optimal profile onto the lattice.
pub fn bau_quantization_bound(kind: BauKind, inst: &Tiny) -> f64 {
    let dt = inst.grid.dt_hours();
    inst.txs
        .iter()
        .map(|tx| {
            let h = lattice_step(tx) * dt;
            match kind {
                BauKind::Cost => h * tx.connected().map(|t| inst.prices.values()[t].abs()).sum::<f64>(),
                BauKind::Mef => h * tx.connected().map(|t| inst.mef.values()[t].abs()).sum::<f64>(),
                BauKind::Unopt => h * tx.duration_steps() as f64,
            }
        })
        .sum()
}

pub struct Comparison {
    pub lp: f64,
    pub oracle: f64,
    pub bound: f64,
}

impl Comparison {
    /// LP at least as good as the lattice optimum and no better than the
    /// quantization bound allows.
    pub fn holds(&self, sense: Sense) -> bool {
        let gain = match sense {
            Sense::Minimize => self.oracle - self.lp,
            Sense::Maximize => self.lp - self.oracle,
        };
        gain >= -SLACK && gain <= self.bound + SLACK
    }
}

pub fn compare_bau(kind: BauKind, inst: &Tiny) -> (Comparison, Sense, Schedule) {
    let strategy = strategy_for(kind, inst);
    let bau = schedule_bau(&inst.txs, &inst.grid, &strategy).unwrap();
    let sense = strategy.sense();
    let oracle = brute_force_oracle(&inst.txs, &inst.grid, LEVELS, sense, &|_, _| None, &|p| {
        strategy_objective(kind, inst, p)
    })
    .unwrap();
    let lp = strategy_objective(kind, inst, bau.power_kw());
    (Comparison { lp, oracle: oracle.objective_value, bound: bau_quantization_bound(kind, inst) }, sense, bau)
}

fn on_lattice(v: f64, tx: &Transaction) -> bool {
    let k = (v - tx.p_min_kw()) / lattice_step(tx);
    (k - k.round()).abs() < 1e-9
}

/// Compares a product LP against the oracle, pinning frozen steps to the BAU
/// power. `None` when a pinned BAU value is off the lattice.
pub fn compare_product(bau: &Schedule, inst: &Tiny, request: &FlexRequest) -> Option<(Comparison, Sense)> {
    let freeze = freeze_step(request, &inst.grid);
    for (n, tx) in inst.txs.iter().enumerate() {
        for t in tx.arrive_step()..freeze.min(tx.depart_step()) {
            if !on_lattice(bau.power_kw()[n][t], tx) {
                return None;
            }
        }
    }
    let result = solve_product(bau, &inst.txs, request, Accounting::default(), FlexOptions::default()).unwrap();
    let baseline: Vec<f64> = (0..inst.grid.n_steps()).map(|t| aggregate(bau.power_kw(), t)).collect();
    let window = request.window();
    let pin = |n: usize, t: usize| (t < freeze).then(|| bau.power_kw()[n][t]);
    let (sense, oracle) = match request.product() {
        Product::Redispatch => (
            Sense::Maximize,
            brute_force_oracle(&inst.txs, &inst.grid, LEVELS, Sense::Maximize, &pin, &|p| {
                window.clone().map(|t| baseline[t] - aggregate(p, t)).fold(f64::INFINITY, f64::min)
            }),
        ),
        Product::CapacityLimitation => (
            Sense::Minimize,
            brute_force_oracle(&inst.txs, &inst.grid, LEVELS, Sense::Minimize, &pin, &|p| {
                window.clone().map(|t| aggregate(p, t)).fold(0.0, f64::max)
            }),
        ),
    };
    let oracle = oracle.unwrap();
    if !oracle.is_optimal() {
        return None;
    }
    let bound: f64 = inst.txs.iter().map(lattice_step).sum();
    Some((Comparison { lp: result.magnitude_kw, oracle: oracle.objective_value, bound }, sense))
}

/// A request whose window lies in the instance's active steps.
pub fn random_request<R: Rng>(rng: &mut R, inst: &Tiny, product: Product) -> FlexRequest {
    let first = inst.txs.iter().map(Transaction::arrive_step).min().unwrap();
    let last = inst.txs.iter().map(Transaction::depart_step).max().unwrap();
    let start = rng.random_range(first..last);
    let len = rng.random_range(1..=3).min(last - start).max(1);
    // Freeze point anywhere from well before arrival up to the window start.
    let freeze = rng.random_range(first.saturating_sub(2)..start.max(first.saturating_sub(2) + 1));
    let lead_h = ((start - freeze).max(1)) as f64 * inst.grid.dt_hours();
    FlexRequest::new(product, start, len, lead_h, inst.txs[0].is_v2g(), &inst.grid).unwrap()
}
