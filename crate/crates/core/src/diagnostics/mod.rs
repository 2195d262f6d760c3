//! Executable checks on kernels, stationary states and trajectories.

mod bounds;
mod inequalities;
mod steady;
mod tail;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use bounds::{apriori_bounds, check_trajectory, AprioriConstants, TrajectoryCheck, B7_TOL, MOMENT_BAND_TOL};
pub use inequalities::{
    algebraic_checks, b3_check, concavity_gap, kappa, AlgebraicReport, B3Report, InequalitySlack, ALGEBRAIC_TOL,
};
pub use steady::{
    check_d2a, check_d2b, d7_terms, default_battery, default_weights, stationarity_residual, weighted_transfer_check,
    D2aReport, D2bReport, D7Terms, Residual, SteadyState, TransferReport, LAMBDA_IDENTITY_TOL, NUMBER_IDENTITY_TOL,
};
pub use tail::{tail_slope, TailFit, TailWindow};

use crate::error::{Error, Result};
use crate::evolution::{Problem, SteadyRun};
use crate::kernels::Kernel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    /// Relative slack of both moment sandwiches and the transfer bound.
    pub sandwich_tol: f64,
    /// Largest acceptable stationarity residual.
    pub residual_tol: f64,
    pub tail_window: TailWindow,
    /// Extra moment orders to report.
    pub moments: Vec<f64>,
    /// Cap values `A` for `min{x, A}/A` in the battery; empty keeps the default.
    pub battery_caps: Vec<f64>,
    /// Assert the `M_λ` floor along trajectories.
    pub check_floor: bool,
    /// Treat sandwich checks that cannot be applied (e.g. `λ ≥ 1`) as failures.
    pub require_existence: bool,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            sandwich_tol: 0.02,
            residual_tol: 1e-4,
            tail_window: TailWindow::default(),
            moments: Vec::new(),
            battery_caps: Vec::new(),
            check_floor: false,
            require_existence: true,
        }
    }
}

/// A check result or the reason it could not be applied.
#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum Outcome<T> {
    Done(T),
    Skipped { inapplicable: String },
}

impl<T> Outcome<T> {
    fn from(r: Result<T>) -> Result<Self> {
        match r {
            Ok(v) => Ok(Outcome::Done(v)),
            Err(Error::Inapplicable(msg)) => Ok(Outcome::Skipped { inapplicable: msg }),
            Err(e) => Err(e),
        }
    }

    pub fn done(&self) -> Option<&T> {
        match self {
            Outcome::Done(v) => Some(v),
            Outcome::Skipped { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct OverflowFlux {
    pub number: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SteadyReport {
    pub delta: f64,
    pub converged: bool,
    pub residual: f64,
    pub steps: usize,
    pub moments: BTreeMap<String, f64>,
    pub d2a: Outcome<D2aReport>,
    pub d2b: Outcome<D2bReport>,
    pub residuals: Vec<Residual>,
    pub tail: Outcome<TailFit>,
    pub transfer: Vec<TransferReport>,
    pub constants: Outcome<AprioriConstants>,
    pub trajectory: Outcome<TrajectoryCheck>,
    pub overflow: OverflowFlux,
    #[serde(rename = "checks_pass")]
    pub pass: bool,
}

fn moment_key(m: f64) -> String {
    format!("{m}")
}

/// Runs every steady-state check on the outcome of one δ-stage.
pub fn steady_report(
    kernel: &Kernel,
    problem: &Problem,
    run: &SteadyRun,
    delta: f64,
    steady_tol: f64,
    cfg: &DiagnosticsConfig,
) -> Result<SteadyReport> {
    let grid = problem.grid();
    let phi = &run.phi;
    let source = problem.source_at(delta)?;
    let lambda = problem.lambda;
    let mut orders = vec![0.0, lambda, 1.0, 1.0 + lambda, 0.5 * (1.0 + lambda)];
    orders.extend(&cfg.moments);
    let moments = orders.iter().map(|&m| (moment_key(m), grid.moment(phi, m))).collect();

    let state = SteadyState { table: &problem.table, phi, source: &source, delta, residual: run.residual, steady_tol };
    let d2a = Outcome::from(check_d2a(kernel, &state, cfg.sandwich_tol))?;
    let full = kernel.lambda().and_then(|l| problem.source.moment(l).ok());
    let d2b = Outcome::from(check_d2b(kernel, &state, cfg.sandwich_tol, full))?;

    let mut battery = default_battery(grid, lambda);
    if !cfg.battery_caps.is_empty() {
        battery.retain(|t| !t.name.starts_with("min(x,"));
        for &a in &cfg.battery_caps {
            battery.push(crate::coag_op::TestFunction::sample(
                format!("min(x,{a:e})/{a:e}"),
                grid,
                |x| x.min(a) / a,
                crate::coag_op::OverflowValue::Capped { cap: a, power: 1.0 },
            ));
        }
    }
    let residuals = stationarity_residual(&problem.table, phi, &source, delta, &battery);
    let tail = Outcome::from(tail_slope(grid, phi, cfg.tail_window))?;
    let transfer = weighted_transfer_check(kernel, grid, phi, &source, &default_weights(grid), cfg.sandwich_tol)?;
    let constants = Outcome::from(apriori_bounds(kernel, &problem.source))?;
    let trajectory = match constants.done() {
        Some(c) => Outcome::Done(check_trajectory(&run.trajectory, c, delta, cfg.check_floor)),
        None => Outcome::Skipped { inapplicable: "no a-priori constants".into() },
    };
    let rates = problem.table.apply(phi);

    let strict = cfg.require_existence;
    let d2a_ok = match &d2a {
        Outcome::Done(r) => r.pass && r.identity_pass,
        Outcome::Skipped { .. } => !strict,
    };
    let d2b_ok = match &d2b {
        Outcome::Done(r) => r.pass && r.identity_pass,
        Outcome::Skipped { .. } => !strict,
    };
    let pass = run.converged
        && d2a_ok
        && d2b_ok
        && residuals.iter().all(|r| r.value <= cfg.residual_tol)
        && transfer.iter().all(|t| t.pass)
        && trajectory.done().is_none_or(|t| t.pass());

    Ok(SteadyReport {
        delta,
        converged: run.converged,
        residual: run.residual,
        steps: run.steps,
        moments,
        d2a,
        d2b,
        residuals,
        tail,
        transfer,
        constants,
        trajectory,
        overflow: OverflowFlux { number: rates.overflow_number, mass: rates.overflow_mass },
        pass,
    })
}
