//! Relaxation of the regularised equation
//! `∂_t f = C f + S_δ − 2δ f` to its stationary state, δ-continuation, and
//! the domain-ladder probe used for kernels that admit no steady state.
//!
//! Time stepping is loss-implicit and gain-explicit:
//!
//! ```text
//! φ_i' = (φ_i + dt (cross_i + S_δ,i)) / (1 + dt (loss_rate_i − self_i + 2δ))
//! ```
//!
//! where `self_i φ_i` is the part of the gain whose pair involves bin `i`
//! itself (a large particle absorbing a small one often stays in its own
//! bin) and `cross_i` the rest. Keeping that part explicit would make the
//! large-`dt` iteration contract by only `1 − O(Δx_small/Δx_i)` per step.
//! The update keeps every iterate non-negative for any `dt > 0` and has
//! exactly the discrete stationary states as fixed points.

use serde::{Deserialize, Serialize};

use crate::coag_op::{PairTable, Rates};
use crate::error::{domain, Error, Result};
use crate::grid::{Grid, SizeDistribution};
use crate::kernels::Kernel;
use crate::sources::SourceSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvolveParams {
    pub delta: f64,
    pub dt_init: f64,
    pub dt_max: f64,
    pub t_max: f64,
    pub steady_tol: f64,
    pub max_steps: usize,
    /// Absolute ceiling on `M_λ`; the run stops and is flagged above it.
    pub blowup_limit: Option<f64>,
}

impl Default for EvolveParams {
    fn default() -> Self {
        EvolveParams {
            delta: 1e-2,
            dt_init: 1e-2,
            dt_max: 1e3,
            t_max: 1e9,
            steady_tol: 1e-8,
            max_steps: 200_000,
            blowup_limit: None,
        }
    }
}

impl EvolveParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return domain(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if !(self.dt_init > 0.0 && self.dt_max >= self.dt_init) {
            return domain("need 0 < dt_init ≤ dt_max");
        }
        if !(self.steady_tol > 0.0 && self.t_max > 0.0) {
            return domain("steady_tol and t_max must be positive");
        }
        Ok(())
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }
}

/// One recorded state along a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub dt: f64,
    pub m0: f64,
    pub m_lambda: f64,
    pub m1: f64,
    pub m1_lambda: f64,
    pub extra: Vec<f64>,
    /// Instantaneous `dM_0/dt` from the discrete right-hand side.
    pub dm0_dt: f64,
    pub overflow_number: f64,
    pub overflow_mass: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct TrajectoryRecord {
    pub lambda: f64,
    pub extra_orders: Vec<f64>,
    pub points: Vec<TrajectoryPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxSteps,
    TimeLimit,
    BlowUp,
}

#[derive(Debug, Clone)]
pub struct SteadyRun {
    pub phi: SizeDistribution,
    pub trajectory: TrajectoryRecord,
    pub converged: bool,
    pub stop: StopReason,
    pub steps: usize,
    pub residual: f64,
}

/// Problem data shared by every δ: operator table plus untruncated source.
#[derive(Debug, Clone)]
pub struct Problem {
    pub table: PairTable,
    pub source: SourceSpec,
    /// Degree used for `M_λ` bookkeeping and the residual weight.
    pub lambda: f64,
    /// Additional moment orders to record.
    pub extra_orders: Vec<f64>,
}

impl Problem {
    pub fn new(kernel: &Kernel, grid: &Grid, source: SourceSpec) -> Problem {
        Problem {
            table: PairTable::new(kernel, grid),
            source: source.untruncated(),
            lambda: kernel.moment_degree(),
            extra_orders: Vec::new(),
        }
    }

    pub fn grid(&self) -> &Grid {
        self.table.grid()
    }

    /// Bin-averaged `S_δ`.
    pub fn source_at(&self, delta: f64) -> Result<Vec<f64>> {
        self.source.truncated(delta)?.project(self.grid())
    }
}

/// `gain − φ·loss_rate + S − 2δφ`.
fn rhs(rates: &Rates, phi: &[f64], source: &[f64], delta: f64) -> Vec<f64> {
    rates
        .gain
        .iter()
        .zip(&rates.loss_rate)
        .zip(phi)
        .zip(source)
        .map(|(((g, l), p), s)| g - p * l + s - 2.0 * delta * p)
        .collect()
}

fn semi_implicit(rates: &Rates, phi: &[f64], source: &[f64], dt: f64, delta: f64) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(phi.len());
    for (i, &p) in phi.iter().enumerate() {
        // self_rate ≤ loss_rate since every allocation weight is at most 1
        let net_loss = (rates.loss_rate[i] - rates.self_rate[i]).max(0.0);
        let num = p + dt * (rates.cross_gain[i] + source[i]);
        let den = 1.0 + dt * (net_loss + 2.0 * delta);
        let v = num / den;
        if !v.is_finite() {
            return Err(Error::Numerical(format!("non-finite density at bin {i} (dt = {dt:e})")));
        }
        out.push(v);
    }
    Ok(out)
}

/// One semi-implicit step of size `dt`.
pub fn step(
    table: &PairTable,
    source_delta: &[f64],
    phi: &SizeDistribution,
    dt: f64,
    delta: f64,
) -> Result<SizeDistribution> {
    if !(dt > 0.0) {
        return domain(format!("time step must be positive, got {dt}"));
    }
    let rates = table.apply(phi);
    if !(rates.overflow_number.is_finite() && rates.loss_rate.iter().all(|v| v.is_finite())) {
        return Err(Error::Numerical("non-finite coagulation rates".into()));
    }
    Ok(SizeDistribution::from_vec_unchecked(semi_implicit(
        &rates,
        phi.values(),
        source_delta,
        dt,
        delta,
    )?))
}

/// Weighted steady-state residual `max_i |dφ_i/dt| (1 + x_i^λ) Δx_i / (M_0 + M_λ + ε)`.
pub fn steady_residual(grid: &Grid, lambda: f64, phi: &[f64], rate: &[f64]) -> f64 {
    let denom = grid.moment_of(phi, 0.0) + grid.moment_of(phi, lambda) + f64::EPSILON;
    let mut worst: f64 = 0.0;
    for ((&r, &x), &dx) in rate.iter().zip(grid.pivots()).zip(grid.widths()) {
        worst = worst.max(r.abs() * (1.0 + x.powf(lambda)) * dx);
    }
    worst / denom
}

struct Snapshot {
    rates: Rates,
    rate: Vec<f64>,
    residual: f64,
}

fn snapshot(problem: &Problem, phi: &[f64], source: &[f64], delta: f64) -> Result<Snapshot> {
    let rates = problem.table.apply(&SizeDistribution::from_vec_unchecked(phi.to_vec()));
    if !rates.overflow_mass.is_finite() {
        return Err(Error::Numerical("overflow flux is not finite".into()));
    }
    let rate = rhs(&rates, phi, source, delta);
    let residual = steady_residual(problem.grid(), problem.lambda, phi, &rate);
    Ok(Snapshot { rates, rate, residual })
}

fn record(problem: &Problem, t: f64, dt: f64, phi: &[f64], snap: &Snapshot) -> TrajectoryPoint {
    let g = problem.grid();
    let l = problem.lambda;
    TrajectoryPoint {
        t,
        dt,
        m0: g.moment_of(phi, 0.0),
        m_lambda: g.moment_of(phi, l),
        m1: g.moment_of(phi, 1.0),
        m1_lambda: g.moment_of(phi, 1.0 + l),
        extra: problem.extra_orders.iter().map(|&m| g.moment_of(phi, m)).collect(),
        dm0_dt: g.moment_of(&snap.rate, 0.0),
        overflow_number: snap.rates.overflow_number,
        overflow_mass: snap.rates.overflow_mass,
        residual: snap.residual,
    }
}

/// Relative rise of the residual treated as noise by the step controller.
pub const RESIDUAL_NOISE: f64 = 0.05;
/// Steps without a new smallest residual after which the step cap shrinks.
pub const STAGNATION_PATIENCE: usize = 200;
/// Fraction of the best residual a step must reach to count as progress.
pub const STAGNATION_GAIN: f64 = 0.9;

/// Iterates [`step`] with adaptive `dt` (×1.2 after a residual decrease,
/// ×½ after an increase) until the weighted residual drops below
/// `steady_tol`, the step or time budget runs out, or `M_λ` passes the
/// blow-up limit. The last state is returned in every case.
pub fn evolve_to_steady(params: &EvolveParams, problem: &Problem, init: &SizeDistribution) -> Result<SteadyRun> {
    params.validate()?;
    if init.len() != problem.grid().len() {
        return domain("initial distribution is not aligned with the grid");
    }
    let delta = params.delta;
    let source = problem.source_at(delta)?;
    let mut phi = init.values().to_vec();
    let mut t = 0.0;
    let mut dt = params.dt_init;
    let dt_floor = params.dt_init * 1e-8;
    let mut trajectory = TrajectoryRecord {
        lambda: problem.lambda,
        extra_orders: problem.extra_orders.clone(),
        points: Vec::new(),
    };
    let mut snap = snapshot(problem, &phi, &source, delta)?;
    trajectory.points.push(record(problem, t, 0.0, &phi, &snap));
    let mut steps = 0;
    // Large steps can lock the iteration into a cycle whose residual never
    // rises by much; a stalled best residual lowers the cap on dt instead.
    let mut cap = params.dt_max;
    let mut best = snap.residual;
    let mut since_best = 0;
    let (mut rose, mut widest) = (false, 0.0f64);
    let stop = loop {
        if snap.residual < params.steady_tol {
            break StopReason::Converged;
        }
        if let Some(limit) = params.blowup_limit {
            if trajectory.points.last().map_or(0.0, |p| p.m_lambda) > limit {
                break StopReason::BlowUp;
            }
        }
        if steps >= params.max_steps {
            break StopReason::MaxSteps;
        }
        if t >= params.t_max {
            break StopReason::TimeLimit;
        }
        let next = semi_implicit(&snap.rates, &phi, &source, dt, delta)?;
        let next_snap = snapshot(problem, &next, &source, delta)?;
        t += dt;
        steps += 1;
        let used = dt;
        if next_snap.residual > snap.residual * (1.0 + RESIDUAL_NOISE) {
            dt = (0.5 * dt).max(dt_floor);
            rose = true;
        } else {
            dt = (1.2 * dt).min(cap);
        }
        widest = widest.max(used);
        if next_snap.residual < STAGNATION_GAIN * best {
            best = next_snap.residual;
            since_best = 0;
            (rose, widest) = (false, 0.0);
        } else {
            since_best += 1;
            if since_best >= STAGNATION_PATIENCE {
                // a slow monotone decay is left alone; only an oscillating
                // stall is pushed below the steps that drove it
                if rose {
                    cap = (0.25 * widest).max(dt_floor);
                    dt = dt.min(cap);
                }
                best = next_snap.residual;
                since_best = 0;
                (rose, widest) = (false, 0.0);
            }
        }
        phi = next;
        snap = next_snap;
        trajectory.points.push(record(problem, t, used, &phi, &snap));
    };
    Ok(SteadyRun {
        phi: SizeDistribution::from_vec_unchecked(phi),
        trajectory,
        converged: stop == StopReason::Converged,
        stop,
        steps,
        residual: snap.residual,
    })
}

#[derive(Debug, Clone)]
pub struct Stage {
    pub delta: f64,
    pub run: SteadyRun,
}

#[derive(Debug, Clone)]
pub struct SteadyFamily {
    pub stages: Vec<Stage>,
    /// Every requested δ was solved to tolerance.
    pub complete: bool,
    pub blown_up: bool,
}

impl SteadyFamily {
    pub fn last(&self) -> Option<&Stage> {
        self.stages.last()
    }
}

pub fn check_deltas(deltas: &[f64]) -> Result<()> {
    if deltas.is_empty() {
        return domain("at least one delta is required");
    }
    if deltas.iter().any(|&d| !(d > 0.0 && d < 1.0)) {
        return domain("every delta must lie in (0, 1)");
    }
    if deltas.windows(2).any(|w| !(w[1] < w[0])) {
        return domain("deltas must be strictly decreasing");
    }
    Ok(())
}

/// Solves at the largest δ from `φ ≡ 0` and warm-starts each smaller δ from
/// the previous steady state. Stops at the first stage that fails to
/// converge or blows up.
pub fn delta_continuation(deltas: &[f64], params: &EvolveParams, problem: &Problem) -> Result<SteadyFamily> {
    check_deltas(deltas)?;
    let mut stages = Vec::with_capacity(deltas.len());
    let mut init = SizeDistribution::zeros(problem.grid().len());
    let mut blown_up = false;
    for &delta in deltas {
        let run = evolve_to_steady(&params.with_delta(delta), problem, &init)?;
        let ok = run.converged;
        blown_up = run.stop == StopReason::BlowUp;
        init = run.phi.clone();
        stages.push(Stage { delta, run });
        if !ok {
            break;
        }
    }
    let complete = stages.len() == deltas.len() && stages.iter().all(|s| s.run.converged);
    Ok(SteadyFamily { stages, complete, blown_up })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Exists,
    Nonexistent,
    Inconclusive,
}

#[derive(Debug, Clone)]
pub struct ProbeConfig {
    pub kernel: Kernel,
    pub source: SourceSpec,
    pub x_min: f64,
    pub bins_per_decade: u32,
    pub x_max_ladder: Vec<f64>,
    pub deltas: Vec<f64>,
    pub params: EvolveParams,
    /// Minimum per-decade growth of `M_λ` for a non-existence verdict.
    pub growth_factor: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeRung {
    pub x_max: f64,
    pub delta: f64,
    pub converged: bool,
    pub blown_up: bool,
    pub m0: f64,
    pub m_lambda: f64,
    /// The three non-negative terms of the `min{x, A}` identity at `A` one
    /// decade below `x_max`, and the source side `Σ min{x, A} S_δ Δx`.
    pub d7: crate::diagnostics::D7Terms,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    pub lambda: f64,
    pub rungs: Vec<ProbeRung>,
    /// `(M_λ(next) / M_λ(prev))^{1/decades}` between consecutive rungs.
    pub growth_per_decade: Vec<f64>,
    pub verdict: Verdict,
}

/// Runs δ-continuation on each domain of the ladder and classifies how
/// `M_λ` at the smallest δ responds to enlarging the domain.
pub fn nonexistence_probe(cfg: &ProbeConfig) -> Result<ProbeReport> {
    if cfg.x_max_ladder.len() < 2 || cfg.x_max_ladder.windows(2).any(|w| !(w[1] > w[0])) {
        return domain("the x_max ladder needs at least two increasing entries");
    }
    check_deltas(&cfg.deltas)?;
    let lambda = cfg.kernel.moment_degree();
    let mut rungs = Vec::with_capacity(cfg.x_max_ladder.len());
    for &x_max in &cfg.x_max_ladder {
        let grid = Grid::geometric(cfg.x_min, x_max, cfg.bins_per_decade)?;
        let problem = Problem::new(&cfg.kernel, &grid, cfg.source);
        let family = delta_continuation(&cfg.deltas, &cfg.params, &problem)?;
        let stage = family
            .last()
            .ok_or_else(|| Error::Numerical("continuation produced no stage".into()))?;
        let phi = &stage.run.phi;
        let src = problem.source_at(stage.delta)?;
        let a = grid.pivots()[grid.pivot_floor(x_max / 10.0).unwrap_or(0)];
        rungs.push(ProbeRung {
            x_max,
            delta: stage.delta,
            converged: family.complete,
            blown_up: family.blown_up,
            m0: grid.moment(phi, 0.0),
            m_lambda: grid.moment(phi, lambda),
            d7: crate::diagnostics::d7_terms(&problem.table, phi, &src, stage.delta, a),
        });
    }
    let growth_per_decade: Vec<f64> = rungs
        .windows(2)
        .map(|w| {
            let decades = (w[1].x_max / w[0].x_max).log10();
            (w[1].m_lambda / w[0].m_lambda).powf(1.0 / decades)
        })
        .collect();
    let verdict = classify(&rungs, &growth_per_decade, cfg.growth_factor, &cfg.source);
    Ok(ProbeReport { lambda, rungs, growth_per_decade, verdict })
}

fn classify(rungs: &[ProbeRung], growth: &[f64], g_min: f64, source: &SourceSpec) -> Verdict {
    let all_zero = rungs.iter().all(|r| r.m_lambda == 0.0);
    if source.is_zero() && all_zero {
        return Verdict::Exists;
    }
    if rungs.iter().any(|r| !r.m_lambda.is_finite() || r.m_lambda <= 0.0) {
        return Verdict::Inconclusive;
    }
    // runs that never settled carry no information about the steady state
    let settled = rungs.iter().all(|r| r.converged || r.blown_up);
    if !settled {
        return Verdict::Inconclusive;
    }
    if !growth.is_empty() && growth.iter().all(|&g| g >= g_min) {
        return Verdict::Nonexistent;
    }
    // variation over the top two decades of the ladder
    let top = &rungs[rungs.len() - 1];
    let reference = rungs
        .iter()
        .rev()
        .find(|r| (top.x_max / r.x_max).log10() >= 2.0 - 1e-9);
    if let Some(r) = reference {
        if rungs.iter().all(|r| r.converged) && (top.m_lambda / r.m_lambda - 1.0).abs() <= 0.1 {
            return Verdict::Exists;
        }
    }
    Verdict::Inconclusive
}
