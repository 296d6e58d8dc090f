//! Congestion flexibility of EV charging fleets under different BAU
//! charging strategies.
//!
//! A sample day is snapped onto a 3-day, 15-minute [`TimeGrid`]; a BAU
//! schedule is computed with one of three strategies; the downward redispatch
//! or capacity limitation the fleet can still offer is then found by
//! re-optimizing everything after the activation point.

pub mod bau_scheduler;
pub mod flex_products;
pub mod grid_data;
pub mod lp_core;
pub mod metrics;
pub mod signals;
pub mod sweep_harness;
pub mod synth_fleet;

pub use bau_scheduler::{schedule_bau, BauKind, BauStrategy, Schedule};
pub use flex_products::{solve_capacity_limit, solve_redispatch, FlexRequest, FlexResult, Product};
pub use grid_data::{Category, RawTransaction, TimeGrid, Transaction};
pub use lp_core::{solve, LinearProgram, Solution, SolveStatus};
pub use signals::{Signal, SignalKind, SignalSeries};
pub use sweep_harness::{run_sweep, summarize, ResultTable, SweepConfig};
pub use synth_fleet::{generate, FleetSpec};
