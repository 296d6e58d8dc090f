//! Shared charging polytope, a solver-agnostic LP container, and a
//! brute-force oracle for tiny instances.
//!
//! Energy convention: `e[n][t]` is the energy delivered to session `n` before
//! step `t` starts and `p[n][t]` is the power drawn during step `t`, so
//! `e[n][t + 1] = e[n][t] + p[n][t] * dt`. Only steps where a session is
//! plugged in carry variables; everything else is pinned to a constant and
//! reported through [`VarRef::Fixed`].

use std::fmt::Write as _;
use std::io::{self, Write};

use thiserror::Error;

use crate::grid_data::{TimeGrid, Transaction};

/// Absolute tolerance on constraint residuals of an accepted solution.
pub const RESIDUAL_TOLERANCE: f64 = 1e-6;
/// Values this close to a bound are snapped onto it.
const SNAP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

/// Either a decision variable index or a value pinned by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VarRef {
    Var(usize),
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
struct TransactionVars {
    id: u32,
    arrive: usize,
    depart: usize,
    energy_kwh: f64,
    p_offset: usize,
    e_offset: usize,
}

/// Index map from `(transaction, step)` to LP columns.
///
/// Columns are ordered by transaction (input order), then power variables by
/// step, then interior energy variables by step; the optional product scalar
/// comes last.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableLayout {
    n_steps: usize,
    entries: Vec<TransactionVars>,
    product: Option<usize>,
    n_vars: usize,
}

impl VariableLayout {
    pub fn new(transactions: &[Transaction], n_steps: usize) -> Self {
        let mut n_vars = 0;
        let entries = transactions
            .iter()
            .map(|tx| {
                let len = tx.duration_steps();
                let entry = TransactionVars {
                    id: tx.id(),
                    arrive: tx.arrive_step(),
                    depart: tx.depart_step(),
                    energy_kwh: tx.energy_kwh(),
                    p_offset: n_vars,
                    e_offset: n_vars + len,
                };
                n_vars += 2 * len - 1;
                entry
            })
            .collect();
        Self { n_steps, entries, product: None, n_vars }
    }

    /// Appends one scalar column for the product magnitude.
    pub fn with_product(mut self) -> Self {
        if self.product.is_none() {
            self.product = Some(self.n_vars);
            self.n_vars += 1;
        }
        self
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_transactions(&self) -> usize {
        self.entries.len()
    }

    pub fn transaction_id(&self, n: usize) -> u32 {
        self.entries[n].id
    }

    pub fn product(&self) -> Option<usize> {
        self.product
    }

    /// Power of transaction `n` during step `t`.
    pub fn power(&self, n: usize, t: usize) -> VarRef {
        let e = &self.entries[n];
        if (e.arrive..e.depart).contains(&t) {
            VarRef::Var(e.p_offset + t - e.arrive)
        } else {
            VarRef::Fixed(0.0)
        }
    }

    /// Energy delivered to transaction `n` before step `t` (`t <= n_steps`).
    pub fn energy(&self, n: usize, t: usize) -> VarRef {
        let e = &self.entries[n];
        if t <= e.arrive {
            VarRef::Fixed(0.0)
        } else if t >= e.depart {
            VarRef::Fixed(e.energy_kwh)
        } else {
            VarRef::Var(e.e_offset + t - e.arrive - 1)
        }
    }

    pub fn value(&self, r: VarRef, values: &[f64]) -> f64 {
        match r {
            VarRef::Var(i) => values[i],
            VarRef::Fixed(v) => v,
        }
    }

    /// Column name used in LP dumps and diagnostics.
    pub fn var_name(&self, idx: usize) -> String {
        if Some(idx) == self.product {
            return "c".to_string();
        }
        let n = self.entries.partition_point(|e| e.p_offset <= idx) - 1;
        let e = &self.entries[n];
        if idx < e.e_offset {
            format!("p_{}_{}", e.id, e.arrive + idx - e.p_offset)
        } else {
            format!("e_{}_{}", e.id, e.arrive + 1 + idx - e.e_offset)
        }
    }

    /// Dense `[transaction][step]` power matrix from a column vector.
    pub fn power_matrix(&self, values: &[f64]) -> Vec<Vec<f64>> {
        (0..self.entries.len())
            .map(|n| (0..self.n_steps).map(|t| self.value(self.power(n, t), values)).collect())
            .collect()
    }

    /// Dense `[transaction][0..=n_steps]` cumulative-energy matrix.
    pub fn energy_matrix(&self, values: &[f64]) -> Vec<Vec<f64>> {
        (0..self.entries.len())
            .map(|n| (0..=self.n_steps).map(|t| self.value(self.energy(n, t), values)).collect())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub name: String,
    pub terms: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

impl LinearConstraint {
    /// Signed amount by which `values` violate the constraint (0 if satisfied).
    pub fn violation(&self, values: &[f64]) -> f64 {
        let lhs: f64 = self.terms.iter().map(|&(i, a)| a * values[i]).sum();
        match self.relation {
            Relation::Le => (lhs - self.rhs).max(0.0),
            Relation::Ge => (self.rhs - lhs).max(0.0),
            Relation::Eq => (lhs - self.rhs).abs(),
        }
    }
}

/// A linear program over a [`VariableLayout`].
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub layout: VariableLayout,
    pub sense: Sense,
    /// Dense cost vector, one entry per column.
    pub objective: Vec<f64>,
    /// Constant added to the objective value.
    pub objective_offset: f64,
    pub constraints: Vec<LinearConstraint>,
    pub bounds: Vec<(f64, f64)>,
}

impl LinearProgram {
    pub fn new(layout: VariableLayout, sense: Sense) -> Self {
        let n = layout.n_vars();
        Self {
            layout,
            sense,
            objective: vec![0.0; n],
            objective_offset: 0.0,
            constraints: Vec::new(),
            bounds: vec![(f64::NEG_INFINITY, f64::INFINITY); n],
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_constraint(&mut self, name: impl Into<String>, terms: Vec<(usize, f64)>, relation: Relation, rhs: f64) {
        self.constraints.push(LinearConstraint { name: name.into(), terms, relation, rhs });
    }

    /// Adds `coef * r` to the objective, folding pinned values into the offset.
    pub fn add_objective_term(&mut self, r: VarRef, coef: f64) {
        match r {
            VarRef::Var(i) => self.objective[i] += coef,
            VarRef::Fixed(v) => self.objective_offset += coef * v,
        }
    }

    pub fn fix(&mut self, idx: usize, value: f64) {
        self.bounds[idx] = (value, value);
    }

    pub fn evaluate(&self, values: &[f64]) -> f64 {
        self.objective_offset + self.objective.iter().zip(values).map(|(c, x)| c * x).sum::<f64>()
    }

    /// Largest constraint or bound violation and where it occurs.
    pub fn max_violation(&self, values: &[f64]) -> (f64, String) {
        let mut worst = (0.0, String::new());
        for (i, (&(lo, hi), &x)) in self.bounds.iter().zip(values).enumerate() {
            let v = (lo - x).max(x - hi).max(0.0);
            if v > worst.0 {
                worst = (v, format!("bound of {}", self.layout.var_name(i)));
            }
        }
        for c in &self.constraints {
            let v = c.violation(values);
            if v > worst.0 {
                worst = (v, c.name.clone());
            }
        }
        worst
    }

    /// Writes the program in CPLEX LP text format.
    pub fn write_lp<W: Write>(&self, mut sink: W) -> io::Result<()> {
        let name = |i: usize| self.layout.var_name(i);
        let mut out = String::new();
        writeln!(out, "\\ objective offset {}", self.objective_offset).unwrap();
        out.push_str(match self.sense {
            Sense::Minimize => "Minimize\n",
            Sense::Maximize => "Maximize\n",
        });
        let obj_terms: Vec<(usize, f64)> =
            self.objective.iter().enumerate().filter(|(_, c)| **c != 0.0).map(|(i, c)| (i, *c)).collect();
        out.push_str(" obj:");
        write_terms(&mut out, &obj_terms, &name);
        out.push_str("\nSubject To\n");
        for c in &self.constraints {
            write!(out, " {}:", c.name).unwrap();
            write_terms(&mut out, &c.terms, &name);
            let op = match c.relation {
                Relation::Le => "<=",
                Relation::Eq => "=",
                Relation::Ge => ">=",
            };
            writeln!(out, " {op} {}", c.rhs).unwrap();
        }
        out.push_str("Bounds\n");
        for (i, &(lo, hi)) in self.bounds.iter().enumerate() {
            let n = name(i);
            match (lo.is_finite(), hi.is_finite()) {
                (false, false) => writeln!(out, " {n} free"),
                (true, true) if lo == hi => writeln!(out, " {n} = {lo}"),
                (true, true) => writeln!(out, " {lo} <= {n} <= {hi}"),
                (true, false) => writeln!(out, " {n} >= {lo}"),
                (false, true) => writeln!(out, " -inf <= {n} <= {hi}"),
            }
            .unwrap();
        }
        out.push_str("End\n");
        sink.write_all(out.as_bytes())
    }
}

fn write_terms(out: &mut String, terms: &[(usize, f64)], name: &dyn Fn(usize) -> String) {
    if terms.is_empty() {
        out.push_str(" 0");
    }
    for (k, &(i, a)) in terms.iter().enumerate() {
        if k > 0 && k % 8 == 0 {
            out.push_str("\n   ");
        }
        let sign = if a < 0.0 { '-' } else { '+' };
        write!(out, " {sign} {} {}", a.abs(), name(i)).unwrap();
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LpError {
    #[error("transaction {id} departs at step {depart_step}, beyond the {n_steps}-step horizon")]
    Horizon { id: u32, depart_step: usize, n_steps: usize },
}

/// Emits the charging polytope shared by every problem: power bounds while
/// plugged in, zero power otherwise, cumulative-energy balance from zero at
/// arrival to the energy target at departure, and `0 <= e <= target`.
pub fn build_feasibility(transactions: &[Transaction], grid: &TimeGrid) -> Result<LinearProgram, LpError> {
    build_feasibility_with(transactions, grid, false)
}

pub(crate) fn build_feasibility_with(
    transactions: &[Transaction],
    grid: &TimeGrid,
    with_product: bool,
) -> Result<LinearProgram, LpError> {
    let n_steps = grid.n_steps();
    if let Some(tx) = transactions.iter().find(|tx| tx.depart_step() > n_steps) {
        return Err(LpError::Horizon { id: tx.id(), depart_step: tx.depart_step(), n_steps });
    }
    let mut layout = VariableLayout::new(transactions, n_steps);
    if with_product {
        layout = layout.with_product();
    }
    let dt = grid.dt_hours();
    let mut lp = LinearProgram::new(layout, Sense::Minimize);
    for (n, tx) in transactions.iter().enumerate() {
        for t in tx.connected() {
            if let VarRef::Var(i) = lp.layout.power(n, t) {
                lp.bounds[i] = (tx.p_min_kw(), tx.p_max_kw());
            }
        }
        for t in tx.arrive_step() + 1..tx.depart_step() {
            if let VarRef::Var(i) = lp.layout.energy(n, t) {
                lp.bounds[i] = (0.0, tx.energy_kwh());
            }
        }
        // e[t] - e[t-1] - p[t-1] * dt = 0 for arrive < t <= depart.
        for t in tx.arrive_step() + 1..=tx.depart_step() {
            let mut terms = Vec::with_capacity(3);
            let mut rhs = 0.0;
            match lp.layout.energy(n, t) {
                VarRef::Var(i) => terms.push((i, 1.0)),
                VarRef::Fixed(v) => rhs -= v,
            }
            match lp.layout.energy(n, t - 1) {
                VarRef::Var(i) => terms.push((i, -1.0)),
                VarRef::Fixed(v) => rhs += v,
            }
            if let VarRef::Var(i) = lp.layout.power(n, t - 1) {
                terms.push((i, -dt));
            }
            lp.add_constraint(format!("bal_{}_{}", tx.id(), t), terms, Relation::Eq, rhs);
        }
    }
    Ok(lp)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// The backend failed or returned a point that violates the constraints.
    SolverFailure,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::SolverFailure => "solver_failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub status: SolveStatus,
    pub objective_value: f64,
    pub values: Vec<f64>,
    pub diagnostics: Option<String>,
}

impl Solution {
    fn without_point(status: SolveStatus, diagnostics: Option<String>) -> Self {
        Self { status, objective_value: f64::NAN, values: Vec::new(), diagnostics }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// Solves `lp` with the HiGHS dual simplex.
///
/// Columns are passed in layout order and the solver runs single-threaded
/// with a fixed seed, so repeated solves of the same program return the same
/// vertex bit for bit.
pub fn solve(lp: &LinearProgram) -> Solution {
    // Rows without columns never reach the backend.
    for c in lp.constraints.iter().filter(|c| c.terms.is_empty()) {
        if c.violation(&[]) > RESIDUAL_TOLERANCE {
            return Solution::without_point(SolveStatus::Infeasible, Some(format!("constant row {} violated", c.name)));
        }
    }
    if lp.bounds.iter().any(|&(lo, hi)| lo > hi) {
        return Solution::without_point(SolveStatus::Infeasible, Some("empty variable bounds".into()));
    }
    if lp.n_vars() == 0 {
        return Solution {
            status: SolveStatus::Optimal,
            objective_value: lp.objective_offset,
            values: Vec::new(),
            diagnostics: None,
        };
    }
    match run_highs(lp, true) {
        Ok(Outcome::Ambiguous) => match run_highs(lp, false) {
            Ok(Outcome::Ambiguous) => Solution::without_point(
                SolveStatus::SolverFailure,
                Some("backend could not separate unbounded from infeasible".into()),
            ),
            Ok(Outcome::Done(s)) => finish(lp, s),
            Err(msg) => Solution::without_point(SolveStatus::SolverFailure, Some(msg)),
        },
        Ok(Outcome::Done(s)) => finish(lp, s),
        Err(msg) => Solution::without_point(SolveStatus::SolverFailure, Some(msg)),
    }
}

enum Outcome {
    Done(Solution),
    Ambiguous,
}

fn run_highs(lp: &LinearProgram, presolve: bool) -> Result<Outcome, String> {
    use highs::{HighsModelStatus, RowProblem};

    let mut problem = RowProblem::default();
    let cols: Vec<_> = lp
        .objective
        .iter()
        .zip(&lp.bounds)
        .map(|(&c, &(lo, hi))| problem.add_column(c, lo..=hi))
        .collect();
    for c in lp.constraints.iter().filter(|c| !c.terms.is_empty()) {
        let terms: Vec<_> = c.terms.iter().map(|&(i, a)| (cols[i], a)).collect();
        match c.relation {
            Relation::Le => problem.add_row(..=c.rhs, terms),
            Relation::Ge => problem.add_row(c.rhs.., terms),
            Relation::Eq => problem.add_row(c.rhs..=c.rhs, terms),
        }
    }
    let sense = match lp.sense {
        Sense::Minimize => highs::Sense::Minimise,
        Sense::Maximize => highs::Sense::Maximise,
    };
    let mut model = problem.try_optimise(sense).map_err(|s| format!("model rejected: {s:?}"))?;
    model.make_quiet();
    model.set_option("threads", 1);
    model.set_option("random_seed", 0);
    model.set_option("solver", "simplex");
    model.set_option("presolve", if presolve { "on" } else { "off" });
    // Product LPs carry secondary costs near 1e-8 per unit; the default
    // dual tolerance (1e-7) would treat them as zero.
    model.set_option("dual_feasibility_tolerance", 1e-10);
    let solved = model.try_solve().map_err(|s| format!("backend error: {s:?}"))?;
    let outcome = match solved.status() {
        HighsModelStatus::Optimal => {
            let values = solved.get_solution().columns().to_vec();
            Outcome::Done(Solution { status: SolveStatus::Optimal, objective_value: f64::NAN, values, diagnostics: None })
        }
        HighsModelStatus::Infeasible => Outcome::Done(Solution::without_point(SolveStatus::Infeasible, None)),
        HighsModelStatus::Unbounded => Outcome::Done(Solution::without_point(SolveStatus::Unbounded, None)),
        HighsModelStatus::UnboundedOrInfeasible => Outcome::Ambiguous,
        other => Outcome::Done(Solution::without_point(
            SolveStatus::SolverFailure,
            Some(format!("backend status {other:?}")),
        )),
    };
    Ok(outcome)
}

fn finish(lp: &LinearProgram, mut s: Solution) -> Solution {
    if s.status != SolveStatus::Optimal {
        return s;
    }
    for (x, &(lo, hi)) in s.values.iter_mut().zip(&lp.bounds) {
        if (*x - lo).abs() <= SNAP_TOLERANCE {
            *x = lo;
        } else if (*x - hi).abs() <= SNAP_TOLERANCE {
            *x = hi;
        }
    }
    let (violation, at) = lp.max_violation(&s.values);
    if violation > RESIDUAL_TOLERANCE {
        return Solution::without_point(
            SolveStatus::SolverFailure,
            Some(format!("residual {violation:e} at {at} exceeds {RESIDUAL_TOLERANCE:e}")),
        );
    }
    s.objective_value = lp.evaluate(&s.values);
    s
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("oracle refuses instance: {0}")]
    TooLarge(String),
    #[error("power_levels must be at least 1")]
    NoLevels,
}

/// Limits of the exhaustive oracle.
pub const ORACLE_MAX_TRANSACTIONS: usize = 2;
pub const ORACLE_MAX_STEPS: usize = 8;
const ORACLE_MAX_COMBINATIONS: usize = 4_000_000;

/// Exhaustively searches power profiles on a uniform lattice of
/// `power_levels + 1` values between each session's power bounds.
///
/// `pin(n, t)` forces the power of transaction `n` at step `t`; `objective`
/// scores a dense `[transaction][step]` power matrix. A profile is accepted
/// when its cumulative energy stays in `[0, target]` and ends at the target
/// within 1e-9 kWh. The best profile (first found on ties) is returned in the
/// column layout of [`VariableLayout::new`].
pub fn brute_force_oracle(
    transactions: &[Transaction],
    grid: &TimeGrid,
    power_levels: usize,
    sense: Sense,
    pin: &dyn Fn(usize, usize) -> Option<f64>,
    objective: &dyn Fn(&[Vec<f64>]) -> f64,
) -> Result<Solution, OracleError> {
    if power_levels == 0 {
        return Err(OracleError::NoLevels);
    }
    if transactions.len() > ORACLE_MAX_TRANSACTIONS {
        return Err(OracleError::TooLarge(format!("{} transactions", transactions.len())));
    }
    let mut steps: Vec<usize> = transactions.iter().flat_map(|tx| tx.connected()).collect();
    steps.sort_unstable();
    steps.dedup();
    if steps.len() > ORACLE_MAX_STEPS {
        return Err(OracleError::TooLarge(format!("{} connected steps", steps.len())));
    }
    if let Some(tx) = transactions.iter().find(|tx| tx.depart_step() > grid.n_steps()) {
        return Err(OracleError::TooLarge(format!("transaction {} leaves the grid", tx.id())));
    }

    let dt = grid.dt_hours();
    let per_tx: Vec<Vec<Vec<f64>>> = transactions
        .iter()
        .enumerate()
        .map(|(n, tx)| {
            let options: Vec<Vec<f64>> = tx
                .connected()
                .map(|t| match pin(n, t) {
                    Some(v) => vec![v],
                    None => {
                        let h = (tx.p_max_kw() - tx.p_min_kw()) / power_levels as f64;
                        (0..=power_levels).map(|k| tx.p_min_kw() + k as f64 * h).collect()
                    }
                })
                .collect();
            let mut out = Vec::new();
            let mut current = Vec::with_capacity(options.len());
            enumerate_profiles(tx, &options, dt, 0.0, &mut current, &mut out);
            out
        })
        .collect();
    let combos = per_tx.iter().map(Vec::len).try_fold(1usize, |acc, k| acc.checked_mul(k.max(1)));
    if combos.is_none_or(|c| c > ORACLE_MAX_COMBINATIONS) {
        return Err(OracleError::TooLarge("too many lattice profiles".into()));
    }
    if per_tx.iter().any(Vec::is_empty) {
        return Ok(Solution::without_point(SolveStatus::Infeasible, Some("no lattice profile is feasible".into())));
    }

    let n_steps = grid.n_steps();
    let mut matrix = vec![vec![0.0; n_steps]; transactions.len()];
    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
    let mut choice = vec![0usize; transactions.len()];
    loop {
        for (n, tx) in transactions.iter().enumerate() {
            for (k, t) in tx.connected().enumerate() {
                matrix[n][t] = per_tx[n][choice[n]][k];
            }
        }
        let value = objective(&matrix);
        let better = match &best {
            None => true,
            Some((b, _)) => match sense {
                Sense::Minimize => value < *b,
                Sense::Maximize => value > *b,
            },
        };
        if better {
            best = Some((value, matrix.clone()));
        }
        // Odometer over per-transaction profile choices.
        let mut n = 0;
        loop {
            if n == choice.len() {
                let (objective_value, power) = best.expect("at least one combination evaluated");
                return Ok(oracle_solution(transactions, n_steps, dt, objective_value, &power));
            }
            choice[n] += 1;
            if choice[n] < per_tx[n].len() {
                break;
            }
            choice[n] = 0;
            n += 1;
        }
    }
}

fn enumerate_profiles(
    tx: &Transaction,
    options: &[Vec<f64>],
    dt: f64,
    energy: f64,
    current: &mut Vec<f64>,
    out: &mut Vec<Vec<f64>>,
) {
    const TOL: f64 = 1e-9;
    let k = current.len();
    let target = tx.energy_kwh();
    if k == options.len() {
        if (energy - target).abs() <= TOL {
            out.push(current.clone());
        }
        return;
    }
    let rest = &options[k + 1..];
    let rest_max: f64 = rest.iter().map(|o| o.iter().cloned().fold(f64::MIN, f64::max)).sum::<f64>() * dt;
    let rest_min: f64 = rest.iter().map(|o| o.iter().cloned().fold(f64::MAX, f64::min)).sum::<f64>() * dt;
    for &p in &options[k] {
        let next = energy + p * dt;
        if next < -TOL || next > target + TOL {
            continue;
        }
        if next + rest_max < target - TOL || next + rest_min > target + TOL {
            continue;
        }
        current.push(p);
        enumerate_profiles(tx, options, dt, next, current, out);
        current.pop();
    }
}

fn oracle_solution(transactions: &[Transaction], n_steps: usize, dt: f64, objective_value: f64, power: &[Vec<f64>]) -> Solution {
    let layout = VariableLayout::new(transactions, n_steps);
    let mut values = vec![0.0; layout.n_vars()];
    for (n, tx) in transactions.iter().enumerate() {
        let mut e = 0.0;
        for t in tx.connected() {
            if let VarRef::Var(i) = layout.power(n, t) {
                values[i] = power[n][t];
            }
            e += power[n][t] * dt;
            if let VarRef::Var(i) = layout.energy(n, t + 1) {
                values[i] = e;
            }
        }
    }
    Solution { status: SolveStatus::Optimal, objective_value, values, diagnostics: None }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_data::Category;
    use chrono::NaiveDate;

    fn grid() -> TimeGrid {
        TimeGrid::for_sample_day(NaiveDate::from_ymd_opt(2023, 6, 1).unwrap())
    }

    fn tx(id: u32, arrive: usize, depart: usize, energy: f64, v2g: bool) -> Transaction {
        Transaction::new(id, Category::Residential, arrive, depart, energy, 11.0, v2g).unwrap()
    }

    fn single_var(lo: f64, hi: f64, sense: Sense) -> LinearProgram {
        let layout = VariableLayout { n_steps: 0, entries: Vec::new(), product: None, n_vars: 0 }.with_product();
        let mut lp = LinearProgram::new(layout, sense);
        lp.objective[0] = 1.0;
        lp.bounds[0] = (lo, hi);
        lp
    }

    #[test]
    fn one_variable_max() {
        let mut lp = single_var(0.0, f64::INFINITY, Sense::Maximize);
        lp.add_constraint("cap", vec![(0, 1.0)], Relation::Le, 3.0);
        let s = solve(&lp);
        assert_eq!(s.status, SolveStatus::Optimal);
        assert!((s.values[0] - 3.0).abs() < 1e-12);
        assert!((s.objective_value - 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_polytope_is_infeasible() {
        let mut lp = single_var(f64::NEG_INFINITY, f64::INFINITY, Sense::Minimize);
        lp.add_constraint("lo", vec![(0, 1.0)], Relation::Ge, 1.0);
        lp.add_constraint("hi", vec![(0, 1.0)], Relation::Le, 0.0);
        assert_eq!(solve(&lp).status, SolveStatus::Infeasible);
    }

    #[test]
    fn unbounded_is_reported() {
        let lp = single_var(0.0, f64::INFINITY, Sense::Maximize);
        assert_eq!(solve(&lp).status, SolveStatus::Unbounded);
    }

    #[test]
    fn layout_pins_outside_connection() {
        let g = grid();
        let txs = [tx(7, 100, 104, 2.75, false)];
        let lp = build_feasibility(&txs, &g).unwrap();
        let free_power: Vec<usize> =
            (0..g.n_steps()).filter(|&t| matches!(lp.layout.power(0, t), VarRef::Var(_))).collect();
        assert_eq!(free_power, vec![100, 101, 102, 103]);
        assert_eq!(lp.layout.energy(0, 100), VarRef::Fixed(0.0));
        assert_eq!(lp.layout.energy(0, 104), VarRef::Fixed(2.75));
        assert_eq!(lp.n_vars(), 7);
        assert_eq!(lp.constraints.len(), 4);
        assert_eq!(lp.layout.var_name(0), "p_7_100");
        assert_eq!(lp.layout.var_name(4), "e_7_101");
    }

    #[test]
    fn unidirectional_power_lower_bounds_are_zero() {
        let g = grid();
        let lp = build_feasibility(&[tx(0, 10, 20, 5.0, false)], &g).unwrap();
        for t in 10..20 {
            let VarRef::Var(i) = lp.layout.power(0, t) else { panic!() };
            assert_eq!(lp.bounds[i], (0.0, 11.0));
        }
    }

    #[test]
    fn v2g_cannot_discharge_in_first_step() {
        let g = grid();
        let mut lp = build_feasibility(&[tx(0, 10, 14, 2.0, true)], &g).unwrap();
        let VarRef::Var(first) = lp.layout.power(0, 10) else { panic!() };
        lp.objective[first] = 1.0;
        let s = solve(&lp);
        assert!(s.is_optimal());
        assert!(s.values[first].abs() < 1e-12, "discharge at arrival: {}", s.values[first]);
    }

    #[test]
    fn horizon_violation_is_an_error() {
        let g = grid();
        let bad = Transaction::new(0, Category::Shared, 280, 300, 1.0, 11.0, false).unwrap();
        assert!(matches!(build_feasibility(&[bad], &g), Err(LpError::Horizon { id: 0, .. })));
    }

    #[test]
    fn degenerate_optima_are_reproducible() {
        let g = grid();
        let txs = [tx(0, 40, 60, 10.0, false), tx(1, 45, 70, 12.0, true)];
        let mut lp = build_feasibility(&txs, &g).unwrap();
        for n in 0..2 {
            for t in 0..g.n_steps() {
                lp.add_objective_term(lp.layout.power(n, t), 0.1 * g.dt_hours());
            }
        }
        let a = solve(&lp);
        let b = solve(&lp);
        assert!(a.is_optimal());
        assert_eq!(a.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn lp_text_dump_mentions_every_section() {
        let g = grid();
        let mut lp = build_feasibility(&[tx(3, 10, 12, 1.0, false)], &g).unwrap();
        lp.add_objective_term(lp.layout.power(0, 10), 0.5);
        let mut buf = Vec::new();
        lp.write_lp(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        for needle in ["Minimize", "Subject To", "bal_3_12:", "Bounds", "0 <= p_3_10 <= 11", "End"] {
            assert!(text.contains(needle), "missing {needle} in\n{text}");
        }
    }

    #[test]
    fn oracle_single_profile() {
        let g = grid();
        // 11 kW for both steps is the only way to deliver 5.5 kWh.
        let txs = [tx(0, 10, 12, 5.5, false)];
        let s = brute_force_oracle(&txs, &g, 4, Sense::Minimize, &|_, _| None, &|_| 0.0).unwrap();
        assert!(s.is_optimal());
        assert_eq!(&s.values[..2], &[11.0, 11.0]);
    }

    #[test]
    fn oracle_charges_first_step_under_rising_prices() {
        let g = grid();
        let txs = [tx(0, 10, 14, 2.75, false)];
        let prices = [0.1, 0.2, 0.3, 0.4];
        let cost = |m: &[Vec<f64>]| (0..4).map(|k| prices[k] * m[0][10 + k] * 0.25).sum::<f64>();
        let s = brute_force_oracle(&txs, &g, 1, Sense::Minimize, &|_, _| None, &cost).unwrap();
        assert_eq!(&s.values[..4], &[11.0, 0.0, 0.0, 0.0]);
        assert!((s.objective_value - 0.275).abs() < 1e-12);
    }

    #[test]
    fn oracle_refuses_large_instances() {
        let g = grid();
        let txs = [tx(0, 10, 20, 1.0, false)];
        let err = brute_force_oracle(&txs, &g, 2, Sense::Minimize, &|_, _| None, &|_| 0.0).unwrap_err();
        assert!(matches!(err, OracleError::TooLarge(_)));
        let three = [tx(0, 10, 11, 1.0, false), tx(1, 10, 11, 1.0, false), tx(2, 10, 11, 1.0, false)];
        assert!(brute_force_oracle(&three, &g, 2, Sense::Minimize, &|_, _| None, &|_| 0.0).is_err());
    }
}
