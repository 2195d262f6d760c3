//! Standalone inequalities: the κ constant of the moment interpolation
//! lemma, its brute-force check on discrete data, and the elementary power
//! inequalities used in the moment sandwiches.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{domain, Result};
use crate::exec::Execution;
use crate::grid::Grid;

/// `κ(θ, m, σ) = 2^{1−m} π² / (3 (1−m)) · 4^{(2−m)/(m+2θ−2σ)}`.
pub fn kappa(theta: f64, m: f64, sigma: f64) -> Result<f64> {
    if !(0.0..=0.5).contains(&theta) {
        return domain(format!("kappa: theta = {theta} outside [0, 1/2]"));
    }
    if !(m > 0.0 && m < 1.0) {
        return domain(format!("kappa: m = {m} outside (0, 1)"));
    }
    if !(sigma >= 0.0 && sigma < 0.5 * (m + 2.0 * theta)) {
        return domain(format!("kappa: sigma = {sigma} outside [0, (m + 2θ)/2)"));
    }
    let lead = 2f64.powf(1.0 - m) * PI * PI / (3.0 * (1.0 - m));
    Ok(lead * 4f64.powf((2.0 - m) / (m + 2.0 * theta - 2.0 * sigma)))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct B3Report {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub pass: bool,
}

/// Compares `(Σ x^σ g Δx)²` with
/// `(κ/2) ΣΣ [x^m + y^m − (x+y)^m] (xy)^θ g g Δx Δx` over the bins with
/// pivot `x ≥ 1`.
pub fn b3_check(grid: &Grid, g: &[f64], theta: f64, m: f64, sigma: f64) -> Result<B3Report> {
    let k = kappa(theta, m, sigma)?;
    if g.len() != grid.len() || g.iter().any(|&v| !(v >= 0.0)) {
        return domain("b3_check needs a non-negative function aligned with the grid");
    }
    let pts: Vec<(f64, f64)> = grid
        .pivots()
        .iter()
        .zip(grid.widths())
        .zip(g)
        .filter(|((&x, _), _)| x >= 1.0)
        .map(|((&x, &dx), &v)| (x, v * dx))
        .collect();
    let first: f64 = pts.iter().map(|&(x, a)| x.powf(sigma) * a).sum();
    let lhs = first * first;
    let mut double = 0.0;
    for &(x, a) in &pts {
        let mut row = 0.0;
        for &(y, b) in &pts {
            row += (x.powf(m) + y.powf(m) - (x + y).powf(m)) * (x * y).powf(theta) * b;
        }
        double += a * row;
    }
    let rhs = 0.5 * k * double;
    let ratio = if rhs > 0.0 { lhs / rhs } else if lhs == 0.0 { 0.0 } else { f64::INFINITY };
    Ok(B3Report { lhs, rhs, ratio, pass: ratio <= 1.0 + 1e-9 })
}

/// `x^λ + y^λ − (x+y)^λ`, evaluated without cancellation when `x ≫ y`.
pub fn concavity_gap(x: f64, y: f64, lambda: f64) -> f64 {
    let (a, b) = if x >= y { (x, y) } else { (y, x) };
    b.powf(lambda) - a.powf(lambda) * (lambda * (b / a).ln_1p()).exp_m1()
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq)]
pub struct InequalitySlack {
    /// Smallest `(upper − lower) / |upper|` observed.
    pub worst: f64,
    pub violations: u64,
}

impl InequalitySlack {
    fn new() -> Self {
        InequalitySlack { worst: f64::INFINITY, violations: 0 }
    }

    fn observe(&mut self, lower: f64, upper: f64) {
        let scale = upper.abs().max(lower.abs());
        let s = if scale > 0.0 { (upper - lower) / scale } else { 0.0 };
        if s < -ALGEBRAIC_TOL {
            self.violations += 1;
        }
        self.worst = self.worst.min(s);
    }

    fn merge(&mut self, other: &Self) {
        self.worst = self.worst.min(other.worst);
        self.violations += other.violations;
    }
}

/// Relative rounding allowance when comparing two sides.
pub const ALGEBRAIC_TOL: f64 = 1e-11;

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct AlgebraicReport {
    pub samples: u64,
    pub seed: u64,
    /// `2^λ (2 − 2^λ) (xy)^λ / (x+y)^λ ≤ x^λ + y^λ − (x+y)^λ`
    pub d4_lower: InequalitySlack,
    /// `x^λ + y^λ − (x+y)^λ ≤ (xy)^λ / (x+y)^λ`
    pub d4_upper: InequalitySlack,
    /// `2^{λ−1} (x^λ + y^λ) ≤ (x+y)^λ`
    pub d5_lower: InequalitySlack,
    /// `(x+y)^λ ≤ x^λ + y^λ`
    pub d5_upper: InequalitySlack,
    pub pass: bool,
}

const CHUNK: u64 = 4096;

/// Samples `λ ∈ [0, 1)` and log-uniform `x, y ∈ [1e-6, 1e6]`. Samples are
/// drawn in fixed chunks with per-chunk seeds, so the report does not
/// depend on the worker count.
pub fn algebraic_checks(sample_count: u64, seed: u64, execution: Execution) -> AlgebraicReport {
    let chunks = sample_count.div_ceil(CHUNK);
    let parts = execution.map_indexed(chunks as usize, |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (c as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let n = CHUNK.min(sample_count - c as u64 * CHUNK);
        let mut s = [InequalitySlack::new(); 4];
        for _ in 0..n {
            let lambda: f64 = rng.gen_range(0.0..1.0);
            let x = 10f64.powf(rng.gen_range(-6.0..=6.0));
            let y = 10f64.powf(rng.gen_range(-6.0..=6.0));
            let gap = concavity_gap(x, y, lambda);
            let ratio = (x * y / (x + y)).powf(lambda);
            let two = 2f64.powf(lambda);
            s[0].observe(two * (2.0 - two) * ratio, gap);
            s[1].observe(gap, ratio);
            let sum = x.powf(lambda) + y.powf(lambda);
            let joint = (x + y).powf(lambda);
            s[2].observe(2f64.powf(lambda - 1.0) * sum, joint);
            s[3].observe(joint, sum);
        }
        s
    });
    let mut total = [InequalitySlack::new(); 4];
    for p in &parts {
        for (t, s) in total.iter_mut().zip(p) {
            t.merge(s);
        }
    }
    let pass = total.iter().all(|s| s.violations == 0);
    AlgebraicReport {
        samples: sample_count,
        seed,
        d4_lower: total[0],
        d4_upper: total[1],
        d5_lower: total[2],
        d5_upper: total[3],
        pass,
    }
}
