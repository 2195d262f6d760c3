//! Seeded self-checks behind `coagstat verify`.
//!
//! Every random draw comes from a generator seeded by `(seed, index)`, and
//! every reduction runs in index order, so the report depends on the seed
//! alone and not on the worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::coag_op::{OverflowValue, PairTable, TestFunction};
use crate::diagnostics::{algebraic_checks, b3_check, kappa, AlgebraicReport, AprioriConstants};
use crate::error::Result;
use crate::exec::Execution;
use crate::grid::{Grid, SizeDistribution};
use crate::kernels::{GeneralKernel, Kernel, SumPowerKernel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Inequalities,
    Operator,
    Bounds,
    All,
}

/// Samples for the elementary power inequalities.
pub const ALGEBRAIC_SAMPLES: u64 = 1_000_000;
/// Random discrete functions for the interpolation inequality.
pub const B3_FUNCTIONS: usize = 1000;
/// Agreement required between the reported right-hand side and the oracle.
pub const B3_ORACLE_TOL: f64 = 1e-12;
/// Relative tolerance of the operator conservation identities.
pub const OPERATOR_TOL: f64 = 1e-10;
pub const WEAK_TESTS: usize = 20;

fn rng_for(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r.set_word_pos(u128::from(index) << 20);
    r
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct B3Suite {
    pub functions: usize,
    pub violations: usize,
    pub worst_ratio: f64,
    /// Largest relative gap between the reported RHS and the oracle.
    pub worst_oracle_gap: f64,
    pub pass: bool,
}

/// Literal double sum with `x ≥ 1` as an indicator inside the loop, summed
/// column-major: the opposite arrangement from the checked routine.
fn b3_oracle(grid: &Grid, g: &[f64], theta: f64, m: f64, sigma: f64) -> Result<f64> {
    let k = kappa(theta, m, sigma)?;
    let x = grid.pivots();
    let dx = grid.widths();
    let ind = |i: usize| if x[i] >= 1.0 { 1.0 } else { 0.0 };
    let mut total = 0.0;
    for j in 0..x.len() {
        for i in 0..x.len() {
            let w = x[i].powf(m) + x[j].powf(m) - (x[i] + x[j]).powf(m);
            total += ind(i) * ind(j) * w * (x[i] * x[j]).powf(theta) * g[i] * dx[i] * g[j] * dx[j];
        }
    }
    Ok(k / 2.0 * total)
}

pub fn b3_suite(seed: u64, functions: usize, execution: Execution) -> Result<B3Suite> {
    let grid = Grid::geometric(1e-2, 1e4, 4)?;
    let rows = execution.map_indexed(functions, |f| -> Result<(f64, f64)> {
        let mut rng = rng_for(seed, 1, f as u64);
        let theta = rng.gen_range(0.0..=0.5);
        let m = rng.gen_range(0.05..0.95);
        let sigma = rng.gen_range(0.0..0.95) * 0.5 * (m + 2.0 * theta);
        let g: Vec<f64> = (0..grid.len())
            .map(|_| if rng.gen_bool(0.8) { 10f64.powf(rng.gen_range(-3.0..3.0)) } else { 0.0 })
            .collect();
        let r = b3_check(&grid, &g, theta, m, sigma)?;
        let oracle = b3_oracle(&grid, &g, theta, m, sigma)?;
        let gap = if oracle == 0.0 { r.rhs.abs() } else { (r.rhs - oracle).abs() / oracle.abs() };
        Ok((r.ratio, gap))
    });
    let mut out = B3Suite { functions, violations: 0, worst_ratio: 0.0, worst_oracle_gap: 0.0, pass: true };
    for row in rows {
        let (ratio, gap) = row?;
        if ratio > 1.0 {
            out.violations += 1;
        }
        out.worst_ratio = out.worst_ratio.max(ratio);
        out.worst_oracle_gap = out.worst_oracle_gap.max(gap);
    }
    out.pass = out.violations == 0 && out.worst_oracle_gap <= B3_ORACLE_TOL;
    Ok(out)
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct InequalitySuite {
    pub algebraic: AlgebraicReport,
    pub b3: B3Suite,
    pub pass: bool,
}

pub fn inequality_suite(seed: u64, execution: Execution) -> Result<InequalitySuite> {
    let algebraic = algebraic_checks(ALGEBRAIC_SAMPLES, seed, execution);
    let b3 = b3_suite(seed, B3_FUNCTIONS, execution)?;
    let pass = algebraic.pass && b3.pass;
    Ok(InequalitySuite { algebraic, b3, pass })
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct OperatorCase {
    pub kernel: String,
    /// `|Σ x dφ Δx + overflow_mass|` over the mass leaving through coalescence.
    pub mass_error: f64,
    /// Worst relative gap in `Σ θ dφ Δx + overflow_term = weak form`.
    pub weak_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct OperatorSuite {
    pub cases: Vec<OperatorCase>,
    pub pass: bool,
}

fn operator_kernels() -> Result<Vec<(String, Kernel)>> {
    Ok(vec![
        ("sum_power lambda=0 k=2".into(), SumPowerKernel::exact(0.0, 2.0)?.into()),
        ("sum_power lambda=0.3 k1=0.8 k2=1.2".into(), SumPowerKernel::sandwich(0.3, 0.8, 1.2)?.into()),
        ("sum_power lambda=0.7 k1=1 k2=2".into(), SumPowerKernel::sandwich(0.7, 1.0, 2.0)?.into()),
        ("sum_power lambda=1.5 k=1".into(), SumPowerKernel::exact(1.5, 1.0)?.into()),
        ("product_power gamma=-0.5 alpha=0.25 k=1".into(), GeneralKernel::exact(-0.5, 0.25, 1.0)?.into()),
    ])
}

pub fn operator_suite(seed: u64, execution: Execution) -> Result<OperatorSuite> {
    let grid = Grid::geometric(1e-2, 1e3, 8)?;
    let mut cases = Vec::new();
    for (c, (name, kernel)) in operator_kernels()?.into_iter().enumerate() {
        let table = PairTable::with_execution(&kernel, &grid, execution);
        let mut rng = rng_for(seed, 2, c as u64);
        let slope = rng.gen_range(0.5..2.5);
        let phi: Vec<f64> = grid
            .pivots()
            .iter()
            .map(|&x| x.powf(-slope) * 10f64.powf(rng.gen_range(-1.0..1.0)))
            .collect();
        let phi = SizeDistribution::new(phi)?;
        let rates = table.apply(&phi);
        let d = rates.dphi(&phi);
        let outflow: f64 = grid.moment_of(
            &rates.loss_rate.iter().zip(phi.values()).map(|(l, p)| l * p).collect::<Vec<_>>(),
            1.0,
        );
        let mass_error = (grid.moment_of(&d, 1.0) + rates.overflow_mass).abs() / outflow;

        let mut weak_error: f64 = 0.0;
        for _ in 0..WEAK_TESTS {
            let values: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let overflow = if rng.gen_bool(0.5) {
                OverflowValue::Removed
            } else {
                OverflowValue::Constant(rng.gen_range(-1.0..1.0))
            };
            let theta = TestFunction { name: String::new(), values, overflow };
            let lhs = grid.pair(&theta.values, &d) + table.overflow_term(&phi, &theta);
            let rhs = table.weak_form(&phi, &theta);
            let x = grid.pivots();
            let scale = table.pair_sum(&phi, |i, j, t| {
                theta.at_sum(t, x[i] + x[j]).abs() + theta.values[i].abs() + theta.values[j].abs()
            });
            weak_error = weak_error.max((lhs - rhs).abs() / scale);
        }
        let pass = mass_error <= OPERATOR_TOL && weak_error <= OPERATOR_TOL;
        cases.push(OperatorCase { kernel: name, mass_error, weak_error, pass });
    }
    let pass = cases.iter().all(|c| c.pass);
    Ok(OperatorSuite { cases, pass })
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct BoundsSuite {
    /// `λ = 0`, `k1 = k2 = 1`, unit source moments: `C1 = 2`, `C4 = 1/2`,
    /// `z_0 = √½`, `C3 = 1`.
    pub reference_error: f64,
    pub random_cases: usize,
    /// Cases violating `C4 ≤ z_0 ≤ C1`, a decreasing `z_δ` or positivity.
    pub ordering_violations: usize,
    pub pass: bool,
}

pub fn bounds_suite(seed: u64) -> BoundsSuite {
    let c = AprioriConstants::new(0.0, 1.0, 1.0, 1.0, 1.0);
    let expected = [(c.c1.unwrap_or(f64::NAN), 2.0), (c.c4, 0.5), (c.z_delta0, 0.5f64.sqrt()), (c.c3.unwrap_or(f64::NAN), 1.0)];
    let reference_error = expected.iter().map(|(a, b)| (a - b).abs() / b).fold(0.0, f64::max);

    let mut rng = rng_for(seed, 3, 0);
    let random_cases = 1000;
    let mut ordering_violations = 0;
    for _ in 0..random_cases {
        let lambda = rng.gen_range(0.0..0.95);
        let k1 = 10f64.powf(rng.gen_range(-1.0..1.0));
        let k2 = k1 * 10f64.powf(rng.gen_range(0.0..1.0));
        let m0 = 10f64.powf(rng.gen_range(-2.0..2.0));
        let ml = 10f64.powf(rng.gen_range(-2.0..2.0));
        let c = AprioriConstants::new(lambda, k1, k2, m0, ml);
        let c1 = c.c1.unwrap_or(f64::NAN);
        let mut ok = c.c4 > 0.0 && c.c4 <= c.z_delta0 && c.z_delta0 < c1 && c.c3.is_some_and(|v| v > 0.0);
        let mut prev = c.z_delta0;
        for d in [1e-3, 1e-2, 1e-1, 0.5] {
            let z = c.z_delta(d);
            ok &= z < prev && z > 0.0;
            prev = z;
        }
        if !ok {
            ordering_violations += 1;
        }
    }
    let pass = reference_error <= 1e-14 && ordering_violations == 0;
    BoundsSuite { reference_error, random_cases, ordering_violations, pass }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct VerifyReport {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inequalities: Option<InequalitySuite>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub operator: Option<OperatorSuite>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoundsSuite>,
    pub pass: bool,
}

pub fn run_suite(suite: Suite, seed: u64, execution: Execution) -> Result<VerifyReport> {
    let want = |s: Suite| suite == Suite::All || suite == s;
    let inequalities = want(Suite::Inequalities).then(|| inequality_suite(seed, execution)).transpose()?;
    let operator = want(Suite::Operator).then(|| operator_suite(seed, execution)).transpose()?;
    let bounds = want(Suite::Bounds).then(|| bounds_suite(seed));
    let pass = inequalities.as_ref().is_none_or(|s| s.pass)
        && operator.as_ref().is_none_or(|s| s.pass)
        && bounds.as_ref().is_none_or(|s| s.pass);
    Ok(VerifyReport { seed, inequalities, operator, bounds, pass })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn b3_suite_small() {
        let r = b3_suite(3, 50, Execution::Sequential).unwrap();
        assert!(r.pass, "{r:?}");
        assert_eq!(r, b3_suite(3, 50, Execution::Parallel).unwrap());
    }

    #[test]
    fn operator_suite_passes() {
        let r = operator_suite(0, Execution::Parallel).unwrap();
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn bounds_suite_passes() {
        let r = bounds_suite(11);
        assert!(r.pass, "{r:?}");
    }
}
