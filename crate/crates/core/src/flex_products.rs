//! Downward redispatch and capacity limitation on top of a BAU schedule.
//!
//! The aggregator learns about a request `lead_time_hours` before the window
//! starts. Every step before that activation point keeps its BAU power; the
//! remaining steps are re-optimized to deliver the product while the
//! strategy objective, scaled by [`EPSILON`], picks among equally good
//! schedules the one closest in spirit to BAU.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use chrono::{NaiveTime, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bau_scheduler::{aggregate_profile, schedule_cost, Schedule};
use crate::grid_data::{TimeGrid, Transaction};
use crate::lp_core::{self, LinearProgram, LpError, Relation, Sense, SolveStatus, VarRef};
use crate::signals::Signal;

/// Weight of the secondary (BAU strategy) objective.
pub const EPSILON: f64 = 1e-6;

/// Lead times studied for the products, in hours.
pub const STUDIED_LEAD_HOURS: (f64, f64) = (1.0, 23.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Product {
    #[serde(rename = "redispatch")]
    Redispatch,
    #[serde(rename = "caplimit", alias = "capacity_limitation")]
    CapacityLimitation,
}

impl Product {
    pub const ALL: [Product; 2] = [Product::Redispatch, Product::CapacityLimitation];

    pub fn as_str(&self) -> &'static str {
        match self {
            Product::Redispatch => "redispatch",
            Product::CapacityLimitation => "caplimit",
        }
    }
}

impl fmt::Display for Product {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Product {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "redispatch" => Ok(Product::Redispatch),
            "caplimit" | "capacity_limitation" | "capacity-limitation" => Ok(Product::CapacityLimitation),
            other => Err(format!("unknown product `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlexError {
    #[error("invalid request: {0}")]
    Request(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Horizon(#[from] LpError),
    #[error("internal error: {product} problem {status}{}", .diagnostics.as_deref().map(|d| format!(": {d}")).unwrap_or_default())]
    Internal { product: Product, status: &'static str, diagnostics: Option<String> },
}

/// A congestion product request for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct FlexRequest {
    product: Product,
    window_start_step: usize,
    window_len_steps: usize,
    lead_time_hours: f64,
    v2g: bool,
}

impl FlexRequest {
    pub fn new(
        product: Product,
        window_start_step: usize,
        window_len_steps: usize,
        lead_time_hours: f64,
        v2g: bool,
        grid: &TimeGrid,
    ) -> Result<Self, FlexError> {
        if window_len_steps == 0 {
            return Err(FlexError::Request("window must contain at least one step".into()));
        }
        let day = grid.anchor_steps();
        if window_start_step < day.start || window_start_step + window_len_steps > day.end {
            return Err(FlexError::Request(format!(
                "window {}..{} is not inside the sample day {}..{}",
                window_start_step,
                window_start_step + window_len_steps,
                day.start,
                day.end
            )));
        }
        if !(lead_time_hours > 0.0) || grid.steps_for_hours(lead_time_hours).is_none() {
            return Err(FlexError::Request(format!(
                "lead time {lead_time_hours} h is not a positive multiple of {} h",
                grid.dt_hours()
            )));
        }
        let request = Self { product, window_start_step, window_len_steps, lead_time_hours, v2g };
        if request.outside_studied_range() {
            tracing::warn!(lead_time_hours, "lead time outside the studied 1-23 h range");
        }
        Ok(request)
    }

    /// Builds a request from a wall-clock window start on the sample day.
    pub fn at_clock(
        product: Product,
        window_start: NaiveTime,
        window_len_hours: f64,
        lead_time_hours: f64,
        v2g: bool,
        grid: &TimeGrid,
    ) -> Result<Self, FlexError> {
        let start = grid
            .step_at(grid.anchor_date().and_time(window_start))
            .filter(|_| window_start.second() == 0)
            .ok_or_else(|| FlexError::Request(format!("window start {window_start} is not on a step boundary")))?;
        let len = grid
            .steps_for_hours(window_len_hours)
            .ok_or_else(|| FlexError::Request(format!("window length {window_len_hours} h is not a step multiple")))?;
        Self::new(product, start, len, lead_time_hours, v2g, grid)
    }

    pub fn product(&self) -> Product {
        self.product
    }

    pub fn window_start_step(&self) -> usize {
        self.window_start_step
    }

    pub fn window_len_steps(&self) -> usize {
        self.window_len_steps
    }

    pub fn window(&self) -> Range<usize> {
        self.window_start_step..self.window_start_step + self.window_len_steps
    }

    pub fn lead_time_hours(&self) -> f64 {
        self.lead_time_hours
    }

    pub fn v2g(&self) -> bool {
        self.v2g
    }

    pub fn outside_studied_range(&self) -> bool {
        self.lead_time_hours < STUDIED_LEAD_HOURS.0 || self.lead_time_hours > STUDIED_LEAD_HOURS.1
    }

    pub fn with_lead_time(&self, lead_time_hours: f64, grid: &TimeGrid) -> Result<Self, FlexError> {
        Self::new(self.product, self.window_start_step, self.window_len_steps, lead_time_hours, self.v2g, grid)
    }

    pub fn with_product(&self, product: Product) -> Self {
        Self { product, ..self.clone() }
    }
}

/// First step the aggregator may change: the window start minus the lead
/// time, clamped at the grid start. Steps before it keep their BAU power.
pub fn freeze_step(request: &FlexRequest, grid: &TimeGrid) -> usize {
    let lead_steps = grid.steps_for_hours(request.lead_time_hours).unwrap_or(usize::MAX);
    request.window_start_step.saturating_sub(lead_steps)
}

/// Signals used to price the schedule change; either may be absent.
#[derive(Debug, Clone, Copy, Default)]
pub struct Accounting<'a> {
    pub prices: Option<&'a Signal>,
    pub mef: Option<&'a Signal>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlexOptions {
    pub epsilon: f64,
    /// Keep sessions that are never plugged in during the window at their BAU
    /// schedule instead of re-optimizing them. The secondary objective is
    /// separable per session and BAU already optimizes it, so the optimum is
    /// unchanged while the LP shrinks to the sessions that matter.
    pub restrict_to_window: bool,
}

impl Default for FlexOptions {
    fn default() -> Self {
        Self { epsilon: EPSILON, restrict_to_window: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlexResult {
    pub product: Product,
    /// Redispatch depth or capacity cap, kW.
    pub magnitude_kw: f64,
    pub adjusted_schedule: Schedule,
    pub status: SolveStatus,
    /// Adjusted minus BAU energy cost, EUR.
    pub cost_delta: Option<f64>,
    /// Adjusted minus BAU emissions, kgCO2.
    pub emission_delta: Option<f64>,
    pub freeze_step: usize,
    /// `epsilon * |f(adjusted)| / |magnitude|`, a scale diagnostic for the
    /// secondary objective. `None` when the magnitude is zero.
    pub secondary_ratio: Option<f64>,
}

pub fn solve_redispatch(
    bau: &Schedule,
    transactions: &[Transaction],
    request: &FlexRequest,
    accounting: Accounting<'_>,
) -> Result<FlexResult, FlexError> {
    if request.product != Product::Redispatch {
        return Err(FlexError::Config(format!("expected a redispatch request, got {}", request.product)));
    }
    solve_product(bau, transactions, request, accounting, FlexOptions::default())
}

pub fn solve_capacity_limit(
    bau: &Schedule,
    transactions: &[Transaction],
    request: &FlexRequest,
    accounting: Accounting<'_>,
) -> Result<FlexResult, FlexError> {
    if request.product != Product::CapacityLimitation {
        return Err(FlexError::Config(format!("expected a capacity limitation request, got {}", request.product)));
    }
    solve_product(bau, transactions, request, accounting, FlexOptions::default())
}

/// The product LP plus the bookkeeping needed to map its solution back.
#[derive(Debug, Clone)]
pub struct ProductProgram {
    pub lp: LinearProgram,
    /// Indices (into the full fleet) of sessions carried by the LP.
    pub active: Vec<usize>,
    pub freeze_step: usize,
}

fn check_inputs(bau: &Schedule, transactions: &[Transaction], request: &FlexRequest) -> Result<(), FlexError> {
    let grid = bau.grid();
    if request.window().end > grid.n_steps() {
        return Err(FlexError::Config("window exceeds the BAU grid".into()));
    }
    if bau.len() != transactions.len() || bau.transaction_ids().iter().zip(transactions).any(|(id, tx)| *id != tx.id()) {
        return Err(FlexError::Config("BAU schedule and transactions do not match".into()));
    }
    if let Some(tx) = transactions.iter().find(|tx| tx.is_v2g() != request.v2g) {
        return Err(FlexError::Config(format!(
            "transaction {} has {} bounds but the request is {}",
            tx.id(),
            if tx.is_v2g() { "V2G" } else { "unidirectional" },
            if request.v2g { "V2G" } else { "unidirectional" }
        )));
    }
    Ok(())
}

/// Builds the product LP without solving it.
pub fn product_program(
    bau: &Schedule,
    transactions: &[Transaction],
    request: &FlexRequest,
    options: FlexOptions,
) -> Result<ProductProgram, FlexError> {
    check_inputs(bau, transactions, request)?;
    let grid = *bau.grid();
    let window = request.window();
    let freeze = freeze_step(request, &grid);
    let active: Vec<usize> = (0..transactions.len())
        .filter(|&n| {
            let span = transactions[n].connected();
            !options.restrict_to_window || (span.start < window.end && window.start < span.end)
        })
        .collect();
    let active_txs: Vec<Transaction> = active.iter().map(|&n| transactions[n].clone()).collect();

    let mut lp = lp_core::build_feasibility_with(&active_txs, &grid, true)?;
    let layout = lp.layout.clone();
    let product_col = layout.product().expect("product column requested");

    for (k, &n) in active.iter().enumerate() {
        for t in transactions[n].arrive_step()..freeze.min(transactions[n].depart_step()) {
            if let VarRef::Var(i) = layout.power(k, t) {
                lp.fix(i, bau.power_kw()[n][t]);
            }
        }
    }

    let baseline = aggregate_profile(bau);
    let mut is_active = vec![false; transactions.len()];
    for &n in &active {
        is_active[n] = true;
    }
    for t in window {
        let fixed: f64 = (0..transactions.len()).filter(|&n| !is_active[n]).map(|n| bau.power_kw()[n][t]).sum();
        let mut terms: Vec<(usize, f64)> = (0..active.len())
            .filter_map(|k| match layout.power(k, t) {
                VarRef::Var(i) => Some((i, 1.0)),
                VarRef::Fixed(_) => None,
            })
            .collect();
        match request.product {
            // sum_n p[n][t] <= baseline[t] - c
            Product::Redispatch => {
                terms.push((product_col, 1.0));
                lp.add_constraint(format!("win_{t}"), terms, Relation::Le, baseline[t] - fixed);
            }
            // sum_n p[n][t] <= c
            Product::CapacityLimitation => {
                terms.push((product_col, -1.0));
                lp.add_constraint(format!("win_{t}"), terms, Relation::Le, -fixed);
            }
        }
    }

    match request.product {
        Product::Redispatch => {
            lp.sense = Sense::Maximize;
            lp.bounds[product_col] = (f64::NEG_INFINITY, f64::INFINITY);
        }
        Product::CapacityLimitation => {
            lp.sense = Sense::Minimize;
            lp.bounds[product_col] = (0.0, f64::INFINITY);
        }
    }
    lp.objective[product_col] = 1.0;
    let strategy = bau.strategy();
    // Secondary term steers towards the strategy's own optimum.
    let weight = if lp.sense == strategy.sense() { options.epsilon } else { -options.epsilon };
    strategy.add_objective(&mut lp, grid.dt_hours(), weight);

    Ok(ProductProgram { lp, active, freeze_step: freeze })
}

/// Solves either product with explicit options.
pub fn solve_product(
    bau: &Schedule,
    transactions: &[Transaction],
    request: &FlexRequest,
    accounting: Accounting<'_>,
    options: FlexOptions,
) -> Result<FlexResult, FlexError> {
    let program = product_program(bau, transactions, request, options)?;
    let solution = lp_core::solve(&program.lp);
    if solution.status != SolveStatus::Optimal {
        return Err(FlexError::Internal {
            product: request.product,
            status: solution.status.as_str(),
            diagnostics: solution.diagnostics,
        });
    }
    let layout = &program.lp.layout;
    let magnitude_kw = solution.values[layout.product().expect("product column")] + 0.0;

    let mut power: Vec<Vec<f64>> = bau.power_kw().to_vec();
    for (k, &n) in program.active.iter().enumerate() {
        for t in transactions[n].connected() {
            if t >= program.freeze_step {
                power[n][t] = layout.value(layout.power(k, t), &solution.values);
            }
        }
    }
    let adjusted_schedule = Schedule::from_power(bau.grid(), transactions, power, bau.strategy().clone());

    let delta = |s: Option<&Signal>| s.map(|s| schedule_cost(&adjusted_schedule, s) - schedule_cost(bau, s));
    let cost_delta = delta(accounting.prices);
    let emission_delta = delta(accounting.mef);
    let secondary_ratio = (magnitude_kw != 0.0)
        .then(|| options.epsilon * bau.strategy().evaluate(&adjusted_schedule).abs() / magnitude_kw.abs());

    Ok(FlexResult {
        product: request.product,
        magnitude_kw,
        adjusted_schedule,
        status: solution.status,
        cost_delta,
        emission_delta,
        freeze_step: program.freeze_step,
        secondary_ratio,
    })
}
