//! Explicit a-priori constants and the trajectory inequalities they control.

use serde::Serialize;

use super::inequalities::kappa;
use crate::error::{Error, Result};
use crate::evolution::TrajectoryRecord;
use crate::kernels::Kernel;
use crate::sources::SourceSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AprioriConstants {
    #[serde(skip)]
    pub lambda: f64,
    #[serde(skip)]
    pub k1: f64,
    #[serde(skip)]
    pub k2: f64,
    #[serde(skip)]
    pub m0_source: f64,
    #[serde(skip)]
    pub m_lambda_source: f64,
    /// Ceiling on `M_λ`; needs `λ < 1`.
    #[serde(rename = "C1")]
    pub c1: Option<f64>,
    /// Floor on `M_λ` for small δ.
    #[serde(rename = "C4")]
    pub c4: f64,
    /// Needs `λ < 1`.
    #[serde(rename = "C3")]
    pub c3: Option<f64>,
    pub z_delta0: f64,
}

pub fn apriori_bounds(kernel: &Kernel, source: &SourceSpec) -> Result<AprioriConstants> {
    let lambda = kernel
        .lambda()
        .ok_or_else(|| Error::Inapplicable("a-priori constants need a sum-power envelope".into()))?;
    let source = source.untruncated();
    let m0_source = source.moment(0.0)?;
    let m_lambda_source = source.moment(lambda)?;
    Ok(AprioriConstants::new(lambda, kernel.k1(), kernel.k2(), m0_source, m_lambda_source))
}

impl AprioriConstants {
    pub fn new(lambda: f64, k1: f64, k2: f64, m0_source: f64, m_lambda_source: f64) -> Self {
        let sub = lambda < 1.0;
        let c1 = sub.then(|| (2.0 * m_lambda_source / ((1.0 - 2f64.powf(lambda - 1.0)) * k1)).sqrt());
        let c4 = (m_lambda_source / (4f64.powf(1.0 - lambda) * k2)).sqrt();
        let c3 = sub.then(|| (2.0 * k2 * m_lambda_source).powf((1.0 + lambda) / (1.0 - lambda)) * m0_source / 2.0);
        let mut out = AprioriConstants { lambda, k1, k2, m0_source, m_lambda_source, c1, c4, c3, z_delta0: 0.0 };
        out.z_delta0 = out.z_delta(0.0);
        out
    }

    /// `[√(k2 M_λ(S) + 2^{1+λ} δ²) − 2^{(1+λ)/2} δ] / (2^{(1−λ)/2} k2)`
    pub fn z_delta(&self, delta: f64) -> f64 {
        let l = self.lambda;
        let root = (self.k2 * self.m_lambda_source + 2f64.powf(1.0 + l) * delta * delta).sqrt();
        (root - 2f64.powf(0.5 * (1.0 + l)) * delta) / (2f64.powf(0.5 * (1.0 - l)) * self.k2)
    }

    /// `κ(λ/2, m, μ) / (2 k1)`.
    pub fn c2(&self, m: f64, mu: f64) -> Result<f64> {
        Ok(kappa(0.5 * self.lambda, m, mu)? / (2.0 * self.k1))
    }

    /// Reference scale for the blow-up guard: `C1` when it exists. `C1`
    /// diverges as `λ → 1⁻`, so above that the scale falls back to
    /// `√(4 M_λ(S)/k1)`, the `λ = 0` form of the same expression.
    pub fn blowup_reference(&self) -> f64 {
        self.c1.unwrap_or_else(|| (4.0 * self.m_lambda_source / self.k1).sqrt())
    }
}

/// Relative slack allowed in the number inequality along a trajectory.
pub const B7_TOL: f64 = 1e-6;
/// Relative slack on the `M_λ` ceiling and floor.
pub const MOMENT_BAND_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryCheck {
    /// `max (dM_0/dt + 2δ M_0 + k1 M_0 M_λ − M_0(S)) / M_0(S)`
    pub b7_worst: f64,
    pub b7_pass: bool,
    /// `max M_λ / C1` when the trajectory starts below `C1`.
    pub ceiling_ratio: Option<f64>,
    pub ceiling_pass: bool,
    /// `min M_λ / C4` after the transient, when requested.
    pub floor_ratio: Option<f64>,
    pub floor_pass: bool,
    pub transient: f64,
}

impl TrajectoryCheck {
    pub fn pass(&self) -> bool {
        self.b7_pass && self.ceiling_pass && self.floor_pass
    }
}

/// Recomputes the trajectory inequalities from the record. The floor is
/// only asserted when `check_floor` is set, after `t ≥ 5 / M_λ(S)^{1/2}`
/// measured from the start of the record.
pub fn check_trajectory(
    record: &TrajectoryRecord,
    constants: &AprioriConstants,
    delta: f64,
    check_floor: bool,
) -> TrajectoryCheck {
    let m0s = constants.m0_source;
    let scale = if m0s > 0.0 { m0s } else { 1.0 };
    let mut b7_worst = f64::NEG_INFINITY;
    for p in &record.points {
        let lhs = p.dm0_dt + 2.0 * delta * p.m0 + constants.k1 * p.m0 * p.m_lambda;
        b7_worst = b7_worst.max((lhs - m0s) / scale);
    }
    let b7_pass = record.points.is_empty() || b7_worst <= B7_TOL;

    let starts_below = match (constants.c1, record.points.first()) {
        (Some(c1), Some(p)) => p.m_lambda <= c1,
        _ => false,
    };
    let ceiling_ratio = if starts_below {
        let c1 = constants.c1.unwrap_or(f64::INFINITY);
        Some(record.points.iter().map(|p| p.m_lambda / c1).fold(0.0, f64::max))
    } else {
        None
    };
    let ceiling_pass = ceiling_ratio.is_none_or(|r| r <= 1.0 + MOMENT_BAND_TOL);

    let transient = if constants.m_lambda_source > 0.0 {
        5.0 / constants.m_lambda_source.sqrt()
    } else {
        0.0
    };
    let floor_ratio = if check_floor && constants.c4 > 0.0 {
        record
            .points
            .iter()
            .filter(|p| p.t >= transient)
            .map(|p| p.m_lambda / constants.c4)
            .reduce(f64::min)
    } else {
        None
    };
    let floor_pass = floor_ratio.is_none_or(|r| r >= 1.0 - MOMENT_BAND_TOL);
    TrajectoryCheck { b7_worst, b7_pass, ceiling_ratio, ceiling_pass, floor_ratio, floor_pass, transient }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_kernel_constants() {
        let c = AprioriConstants::new(0.0, 1.0, 1.0, 1.0, 1.0);
        assert!((c.c1.unwrap() - 2.0).abs() < 1e-15);
        assert!((c.c4 - 0.5).abs() < 1e-15);
        assert!((c.z_delta0 - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((c.c3.unwrap() - 1.0).abs() < 1e-15);
        assert!(c.c4 < c.z_delta0 && c.z_delta0 < c.c1.unwrap());
    }

    #[test]
    fn z_delta_decreases_toward_floor() {
        let c = AprioriConstants::new(0.4, 0.7, 1.3, 2.0, 3.0);
        let mut prev = c.z_delta0;
        for d in [1e-3, 1e-2, 1e-1, 0.5] {
            let z = c.z_delta(d);
            assert!(z < prev);
            prev = z;
        }
        let limit = (c.m_lambda_source / (2f64.powf(1.0 - c.lambda) * c.k2)).sqrt();
        assert!((c.z_delta0 - limit).abs() < 1e-14);
        assert!(c.z_delta0 > c.c4);
    }

    #[test]
    fn lambda_one_limits() {
        let c = AprioriConstants::new(1.0, 2.0, 2.0, 1.0, 3.0);
        assert!(c.c1.is_none() && c.c3.is_none());
        assert!((c.blowup_reference() - 6f64.sqrt()).abs() < 1e-15);
        // 1 − 2^{λ−1} vanishes at λ = 1, so C1 blows up like (1−λ)^{-1/2}
        let near = AprioriConstants::new(1.0 - 1e-9, 2.0, 2.0, 1.0, 3.0);
        let expect = (3.0 / (1e-9 * std::f64::consts::LN_2)).sqrt();
        assert!((near.c1.unwrap() / expect - 1.0).abs() < 1e-6);
        assert!(near.c3.unwrap() > 1e100);
    }

    #[test]
    fn c2_uses_half_lambda() {
        let c = AprioriConstants::new(0.5, 2.0, 2.0, 1.0, 1.0);
        let k = kappa(0.25, 0.5, 0.1).unwrap();
        assert!((c.c2(0.5, 0.1).unwrap() - k / 4.0).abs() < 1e-12);
    }
}
