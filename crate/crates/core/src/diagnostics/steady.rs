//! Checks on a stationary discrete state: moment sandwiches, weak-form
//! residuals, the weighted transfer bound and the `min{x, A}` decomposition.

use serde::Serialize;

use crate::coag_op::{OverflowValue, PairTable, Target, TestFunction};
use crate::error::{domain, Error, Result};
use crate::grid::{Grid, SizeDistribution};
use crate::kernels::Kernel;

/// Relative tolerance for the discrete number identity behind the first
/// sandwich.
pub const NUMBER_IDENTITY_TOL: f64 = 1e-6;
/// Relative tolerance for the discrete `M_λ` identity behind the second
/// sandwich.
pub const LAMBDA_IDENTITY_TOL: f64 = 1e-4;

/// Inputs shared by every steady check.
#[derive(Debug, Clone, Copy)]
pub struct SteadyState<'a> {
    pub table: &'a PairTable,
    pub phi: &'a SizeDistribution,
    /// Bin-averaged `S_δ`.
    pub source: &'a [f64],
    pub delta: f64,
    /// Weighted residual of the run that produced `phi`.
    pub residual: f64,
    pub steady_tol: f64,
}

impl SteadyState<'_> {
    fn grid(&self) -> &Grid {
        self.table.grid()
    }

    fn require_steady(&self) -> Result<()> {
        if !(self.residual <= 10.0 * self.steady_tol) {
            return Err(Error::Inapplicable(format!(
                "state is not stationary: residual {:e} exceeds 10 × steady_tol = {:e}",
                self.residual,
                10.0 * self.steady_tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct D2aReport {
    pub r_lo: f64,
    pub r_hi: f64,
    pub pass: bool,
    pub tol: f64,
    pub m0: f64,
    pub m_lambda: f64,
    pub m0_source: f64,
    /// `M_0(S_δ) − 2δ M_0(φ)`
    pub identity_lhs: f64,
    /// `½ ΣΣ K φ φ Δx Δx + overflow number flux`
    pub identity_rhs: f64,
    pub identity_rel_err: f64,
    pub identity_pass: bool,
}

fn sum_power_lambda(kernel: &Kernel) -> Result<f64> {
    kernel
        .lambda()
        .ok_or_else(|| Error::Inapplicable("moment sandwiches need a sum-power envelope".into()))
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// `k1 M_0 M_λ ≤ M_0(S_δ) ≤ k2 M_0 M_λ` with slack `tol`, plus the exact
/// discrete number balance.
pub fn check_d2a(kernel: &Kernel, state: &SteadyState, tol: f64) -> Result<D2aReport> {
    state.require_steady()?;
    let lambda = sum_power_lambda(kernel)?;
    let g = state.grid();
    let m0 = g.moment(state.phi, 0.0);
    let m_lambda = g.moment(state.phi, lambda);
    let m0_source = g.moment_of(state.source, 0.0);
    let product = m0 * m_lambda;
    let (r_lo, r_hi) = if m0_source > 0.0 {
        (kernel.k1() * product / m0_source, kernel.k2() * product / m0_source)
    } else if product == 0.0 {
        (1.0, 1.0)
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    let pass = r_lo <= 1.0 + tol && r_hi >= 1.0 - tol;
    let collisions = state.table.pair_sum(state.phi, |_, _, _| 1.0);
    let overflow = state.table.pair_sum(state.phi, |_, _, t| if *t == Target::Overflow { 1.0 } else { 0.0 });
    let identity_lhs = m0_source - 2.0 * state.delta * m0;
    let identity_rhs = collisions + overflow;
    let identity_rel_err = rel_err(identity_lhs, identity_rhs);
    Ok(D2aReport {
        r_lo,
        r_hi,
        pass,
        tol,
        m0,
        m_lambda,
        m0_source,
        identity_lhs,
        identity_rhs,
        identity_rel_err,
        identity_pass: identity_rel_err <= NUMBER_IDENTITY_TOL,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct D2bReport {
    pub lower: f64,
    pub m_lambda_sq: f64,
    pub upper: f64,
    pub pass: bool,
    pub tol: f64,
    /// `M_λ(S_δ)`, the value the bounds use.
    pub m_lambda_source: f64,
    /// `M_λ(S)` of the untruncated source, for reference.
    pub m_lambda_source_full: Option<f64>,
    /// `M_λ(S_δ) − 2δ M_λ(φ)`
    pub identity_lhs: f64,
    /// `½ ΣΣ [x^λ + y^λ − θ(x+y)] K φ φ Δx Δx` with removed overflow.
    pub identity_rhs: f64,
    pub identity_rel_err: f64,
    pub identity_pass: bool,
}

/// `2^λ M_λ(S_δ)/k2 ≤ M_λ(φ)² ≤ 2^{1−λ} M_λ(S_δ)/(k1 (2 − 2^λ))` with
/// slack `tol`, plus the discrete `M_λ` balance.
pub fn check_d2b(
    kernel: &Kernel,
    state: &SteadyState,
    tol: f64,
    m_lambda_source_full: Option<f64>,
) -> Result<D2bReport> {
    let lambda = sum_power_lambda(kernel)?;
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::Inapplicable(format!("second sandwich needs λ ∈ [0, 1), got {lambda}")));
    }
    state.require_steady()?;
    let g = state.grid();
    let m_lambda = g.moment(state.phi, lambda);
    let m_lambda_source = g.moment_of(state.source, lambda);
    let two = 2f64.powf(lambda);
    let lower = two * m_lambda_source / kernel.k2();
    let upper = 2f64.powf(1.0 - lambda) * m_lambda_source / (kernel.k1() * (2.0 - two));
    let m_lambda_sq = m_lambda * m_lambda;
    let pass = m_lambda_sq >= lower * (1.0 - tol) && m_lambda_sq <= upper * (1.0 + tol);
    let theta = TestFunction::sample("x^lambda", g, |x| x.powf(lambda), OverflowValue::Removed);
    let identity_rhs = -state.table.weak_form(state.phi, &theta);
    let identity_lhs = m_lambda_source - 2.0 * state.delta * m_lambda;
    let identity_rel_err = rel_err(identity_lhs, identity_rhs);
    Ok(D2bReport {
        lower,
        m_lambda_sq,
        upper,
        pass,
        tol,
        m_lambda_source,
        m_lambda_source_full,
        identity_lhs,
        identity_rhs,
        identity_rel_err,
        identity_pass: identity_rel_err <= LAMBDA_IDENTITY_TOL,
    })
}

/// Test functions for the stationarity residual.
pub fn default_battery(grid: &Grid, lambda: f64) -> Vec<TestFunction> {
    let mut out = vec![TestFunction::sample("1", grid, |_| 1.0, OverflowValue::Constant(1.0))];
    for a in [1e1, 1e2, 1e3, 1e4] {
        out.push(TestFunction::sample(
            format!("min(x,{a:e})/{a:e}"),
            grid,
            |x| x.min(a) / a,
            OverflowValue::Capped { cap: a, power: 1.0 },
        ));
    }
    if lambda > 0.0 {
        for a in [1e1, 1e3] {
            out.push(TestFunction::sample(
                format!("min(x^l,{a:e}^l)/{a:e}^l"),
                grid,
                |x| (x.min(a) / a).powf(lambda),
                OverflowValue::Capped { cap: a, power: lambda },
            ));
        }
    }
    for a in [1.5, 1e1, 1e3] {
        out.push(TestFunction::sample(
            format!("1(0,{a:e})"),
            grid,
            |x| if x < a { 1.0 } else { 0.0 },
            OverflowValue::Below(a),
        ));
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct Residual {
    pub theta: String,
    /// Residual of the discrete stationary equation tested against θ.
    pub value: f64,
    /// `½ ΣΣ_overflow θ(x+y) K φ φ`, relative to the same normaliser: the
    /// part of the continuous weak form carried by pairs that left the grid.
    pub overflow: f64,
    /// `true` when the normaliser `Σ θ S_δ Δx` vanished and `value` is absolute.
    pub absolute: bool,
}

/// `R(θ) = |½ ΣΣ χ_θ K φ φ + Σ θ S_δ Δx − 2δ Σ θ φ Δx| / Σ θ S_δ Δx`, where
/// coalesced pairs that leave the grid count with `θ = 0` as in the
/// operator. Pass `delta = 0` for the residual without efflux.
pub fn stationarity_residual(
    table: &PairTable,
    phi: &SizeDistribution,
    source: &[f64],
    delta: f64,
    battery: &[TestFunction],
) -> Vec<Residual> {
    let g = table.grid();
    battery
        .iter()
        .map(|theta| {
            let removed = TestFunction { overflow: OverflowValue::Removed, ..theta.clone() };
            let injected = g.pair(&theta.values, source);
            let numerator = table.weak_form(phi, &removed) + injected - 2.0 * delta * g.pair(&theta.values, phi.values());
            let over = table.overflow_term(phi, theta);
            let absolute = injected == 0.0;
            let norm = if absolute { 1.0 } else { injected.abs() };
            Residual { theta: theta.name.clone(), value: numerator.abs() / norm, overflow: over / norm, absolute }
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct TransferReport {
    pub weight: String,
    /// `Σ w S_δ Δx`
    pub lhs: f64,
    /// `k1 M_λ(φ) Σ w φ Δx`
    pub rhs: f64,
    pub pass: bool,
}

/// `(x + ε)^{−1}` for ε ∈ {1e-2, 1e-1, 1} and `w ≡ 1`.
pub fn default_weights(grid: &Grid) -> Vec<(String, Vec<f64>)> {
    let mut out: Vec<(String, Vec<f64>)> = [1e-2, 1e-1, 1.0]
        .iter()
        .map(|&e| (format!("1/(x+{e:e})"), grid.pivots().iter().map(|&x| 1.0 / (x + e)).collect()))
        .collect();
    out.push(("1".into(), vec![1.0; grid.len()]));
    out
}

/// `Σ w S_δ Δx ≥ k1 M_λ(φ) Σ w φ Δx` with relative slack `tol`.
pub fn weighted_transfer_check(
    kernel: &Kernel,
    grid: &Grid,
    phi: &SizeDistribution,
    source: &[f64],
    weights: &[(String, Vec<f64>)],
    tol: f64,
) -> Result<Vec<TransferReport>> {
    let lambda = kernel.moment_degree();
    let m_lambda = grid.moment(phi, lambda);
    weights
        .iter()
        .map(|(name, w)| {
            if w.len() != grid.len() {
                return domain(format!("weight {name} is not aligned with the grid"));
            }
            if w.iter().any(|&v| !(v > 0.0 && v.is_finite())) || w.windows(2).any(|p| p[1] > p[0]) {
                return domain(format!("weight {name} must be positive and nonincreasing"));
            }
            let lhs = grid.pair(w, source);
            let rhs = kernel.k1() * m_lambda * grid.pair(w, phi.values());
            Ok(TransferReport { weight: name.clone(), lhs, rhs, pass: lhs >= rhs * (1.0 - tol) })
        })
        .collect()
}

/// Terms of the `θ = min{x, A}` balance at a stationary state:
/// `source − efflux = near + cross + far + overflow`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct D7Terms {
    pub a: f64,
    /// `Σ min{x, A} S_δ Δx`
    pub source: f64,
    /// `2δ Σ min{x, A} φ Δx`
    pub efflux: f64,
    /// `½ ΣΣ_{x, y < A < x + y} (x + y − A) K φ φ`
    pub near: f64,
    /// `ΣΣ_{x < A ≤ y} x K φ φ`
    pub cross: f64,
    /// `(A/2) ΣΣ_{x, y ≥ A} K φ φ`
    pub far: f64,
    /// `A ×` overflow number flux
    pub overflow: f64,
}

impl D7Terms {
    /// `|source − efflux − near − cross − far − overflow| / source`.
    pub fn imbalance(&self) -> f64 {
        let lhs = self.source - self.efflux;
        let rhs = self.near + self.cross + self.far + self.overflow;
        if self.source > 0.0 {
            (lhs - rhs).abs() / self.source
        } else {
            (lhs - rhs).abs()
        }
    }
}

/// Splits the collision side of the `min{x, A}` balance into its three
/// non-negative parts. `A` should be a pivot so that the split allocation
/// represents `min{·, A}` exactly.
pub fn d7_terms(table: &PairTable, phi: &SizeDistribution, source: &[f64], delta: f64, a: f64) -> D7Terms {
    let g = table.grid();
    let x = g.pivots();
    let near = table.pair_sum(phi, |i, j, _| {
        let s = x[i] + x[j];
        if x[i] < a && x[j] < a && s > a {
            s - a
        } else {
            0.0
        }
    });
    let cross = table.pair_sum(phi, |i, j, _| {
        if x[i] < a && x[j] >= a {
            x[i]
        } else if x[j] < a && x[i] >= a {
            x[j]
        } else {
            0.0
        }
    });
    let far = table.pair_sum(phi, |i, j, _| if x[i] >= a && x[j] >= a { a } else { 0.0 });
    let overflow = table.pair_sum(phi, |_, _, t| if *t == Target::Overflow { a } else { 0.0 });
    let capped: Vec<f64> = x.iter().map(|&v| v.min(a)).collect();
    D7Terms {
        a,
        source: g.pair(&capped, source),
        efflux: 2.0 * delta * g.pair(&capped, phi.values()),
        near,
        cross,
        far,
        overflow,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::SumPowerKernel;

    fn constant_table() -> PairTable {
        let k = Kernel::SumPower(SumPowerKernel::exact(0.0, 1.0).unwrap());
        PairTable::new(&k, &Grid::geometric(1.0, 1e3, 4).unwrap())
    }

    #[test]
    fn zero_state_passes_trivially() {
        let t = constant_table();
        let n = t.len();
        let phi = SizeDistribution::zeros(n);
        let src = vec![0.0; n];
        let k = Kernel::SumPower(SumPowerKernel::exact(0.0, 1.0).unwrap());
        let st = SteadyState { table: &t, phi: &phi, source: &src, delta: 0.1, residual: 0.0, steady_tol: 1e-8 };
        let r = check_d2a(&k, &st, 0.02).unwrap();
        assert!(r.pass && r.identity_pass);
        let w = weighted_transfer_check(&k, t.grid(), &phi, &src, &default_weights(t.grid()), 0.02).unwrap();
        assert!(w.iter().all(|r| r.pass));
    }

    #[test]
    fn refuses_non_steady() {
        let t = constant_table();
        let n = t.len();
        let phi = SizeDistribution::zeros(n);
        let src = vec![0.0; n];
        let k = Kernel::SumPower(SumPowerKernel::exact(0.0, 1.0).unwrap());
        let st = SteadyState { table: &t, phi: &phi, source: &src, delta: 0.1, residual: 1e-3, steady_tol: 1e-8 };
        assert!(matches!(check_d2a(&k, &st, 0.02), Err(Error::Inapplicable(_))));
    }

    #[test]
    fn non_monotone_weight_is_rejected() {
        let t = constant_table();
        let n = t.len();
        let phi = SizeDistribution::zeros(n);
        let k = Kernel::SumPower(SumPowerKernel::exact(0.0, 1.0).unwrap());
        let w = vec![("x".to_string(), t.grid().pivots().to_vec())];
        assert!(weighted_transfer_check(&k, t.grid(), &phi, &vec![0.0; n], &w, 0.02).is_err());
    }

    #[test]
    fn d7_terms_match_weak_form() {
        let t = constant_table();
        let g = t.grid();
        let phi = SizeDistribution::from_fn(g, |x| x.powf(-1.5)).unwrap();
        let a = g.pivots()[6];
        let d = d7_terms(&t, &phi, &vec![0.0; g.len()], 0.0, a);
        let theta = TestFunction::sample("min", g, |x| x.min(a), OverflowValue::Constant(a));
        let wf = t.weak_form(&phi, &theta);
        let total = d.near + d.cross + d.far;
        assert!((wf + total).abs() <= 1e-12 * total, "{wf} vs {total}");
    }
}
