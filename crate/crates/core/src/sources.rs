//! Parametric source terms and their δ-truncation `S_δ = S · 1_{(0, 1/δ)}`.

use serde::Serialize;
use serde_json::Value;
use statrs::function::gamma::{gamma, gamma_lr};

use crate::error::{domain, Error, Result};
use crate::grid::Grid;
use crate::quadrature;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum SourceFamily {
    /// `c` on `[a, b]`.
    Indicator { c: f64, a: f64, b: f64 },
    /// `c x^{−p}` on `[a, b]`.
    PowerBump { c: f64, a: f64, b: f64, p: f64 },
    /// `c x^{−p} e^{−x/x_c}` on `(0, ∞)`, `p < 1`.
    PowerExpcut { c: f64, p: f64, x_c: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SourceSpec {
    pub family: SourceFamily,
    pub truncation: Option<f64>,
}

/// Width of the indicator bump standing in for a point mass.
pub const POINT_MASS_WIDTH: f64 = 1e-2;

const MOMENT_RTOL: f64 = 1e-10;

impl SourceSpec {
    pub fn new(family: SourceFamily) -> Result<SourceSpec> {
        match family {
            SourceFamily::Indicator { c, a, b } | SourceFamily::PowerBump { c, a, b, .. } => {
                if !(c >= 0.0 && a >= 0.0 && b > a && b.is_finite()) {
                    return domain(format!("source support must satisfy 0 ≤ a < b and c ≥ 0 (c={c}, a={a}, b={b})"));
                }
                if let SourceFamily::PowerBump { p, .. } = family {
                    if !p.is_finite() {
                        return domain("power_bump exponent must be finite");
                    }
                }
            }
            SourceFamily::PowerExpcut { c, p, x_c } => {
                if !(c >= 0.0 && x_c > 0.0 && p < 1.0) {
                    return domain(format!("power_expcut needs c ≥ 0, x_c > 0, p < 1 (c={c}, p={p}, x_c={x_c})"));
                }
            }
        }
        Ok(SourceSpec { family, truncation: None })
    }

    pub fn indicator(c: f64, a: f64, b: f64) -> Result<SourceSpec> {
        Self::new(SourceFamily::Indicator { c, a, b })
    }

    /// Narrow indicator of total number `mass` centred at `atom`.
    pub fn point_mass(atom: f64, mass: f64) -> Result<SourceSpec> {
        let half = 0.5 * POINT_MASS_WIDTH;
        if atom <= half {
            return domain("point mass must sit above half the bump width");
        }
        Self::indicator(mass / POINT_MASS_WIDTH, atom - half, atom + half)
    }

    /// The zero source.
    pub fn zero() -> SourceSpec {
        SourceSpec {
            family: SourceFamily::Indicator { c: 0.0, a: 1.0, b: 2.0 },
            truncation: None,
        }
    }

    pub fn truncated(mut self, delta: f64) -> Result<SourceSpec> {
        if !(delta > 0.0 && delta < 1.0) {
            return domain(format!("truncation parameter must lie in (0, 1), got {delta}"));
        }
        self.truncation = Some(delta);
        Ok(self)
    }

    pub fn untruncated(mut self) -> SourceSpec {
        self.truncation = None;
        self
    }

    fn cutoff(&self) -> f64 {
        self.truncation.map_or(f64::INFINITY, |d| 1.0 / d)
    }

    pub fn is_zero(&self) -> bool {
        match self.family {
            SourceFamily::Indicator { c, .. }
            | SourceFamily::PowerBump { c, .. }
            | SourceFamily::PowerExpcut { c, .. } => c == 0.0,
        }
    }

    #[inline]
    fn raw(&self, x: f64) -> f64 {
        match self.family {
            SourceFamily::Indicator { c, a, b } => {
                if x >= a && x <= b {
                    c
                } else {
                    0.0
                }
            }
            SourceFamily::PowerBump { c, a, b, p } => {
                if x >= a && x <= b {
                    c * x.powf(-p)
                } else {
                    0.0
                }
            }
            SourceFamily::PowerExpcut { c, p, x_c } => c * x.powf(-p) * (-x / x_c).exp(),
        }
    }

    /// `S_δ(x)` when a truncation is set, `S(x)` otherwise.
    pub fn eval(&self, x: f64) -> Result<f64> {
        if !(x > 0.0) {
            return domain(format!("source evaluated at non-positive size {x}"));
        }
        if x >= self.cutoff() {
            return Ok(0.0);
        }
        Ok(self.raw(x))
    }

    /// True when every moment of order `m ∈ [0, 1)` is finite.
    pub fn has_finite_low_moments(&self) -> bool {
        match self.family {
            SourceFamily::Indicator { .. } | SourceFamily::PowerExpcut { .. } => true,
            SourceFamily::PowerBump { a, p, .. } => a > 0.0 || p < 1.0,
        }
    }

    /// `M_m` in closed form.
    pub fn moment(&self, m: f64) -> Result<f64> {
        let cut = self.cutoff();
        match self.family {
            SourceFamily::Indicator { c, a, b } => power_integral(c, 0.0, a, b.min(cut), m),
            SourceFamily::PowerBump { c, a, b, p } => power_integral(c, p, a, b.min(cut), m),
            SourceFamily::PowerExpcut { c, p, x_c } => {
                let s = m - p + 1.0;
                if s <= 0.0 {
                    return Err(Error::Divergent(format!(
                        "moment of order {m} of x^-{p} e^(-x/x_c) diverges at 0"
                    )));
                }
                if c == 0.0 {
                    return Ok(0.0);
                }
                let full = c * x_c.powf(s) * gamma(s);
                Ok(if cut.is_finite() { full * gamma_lr(s, cut / x_c) } else { full })
            }
        }
    }

    /// `M_m` by adaptive quadrature; independent of [`SourceSpec::moment`].
    pub fn moment_quadrature(&self, m: f64) -> Result<f64> {
        let cut = self.cutoff();
        let f = |x: f64| if x > 0.0 { x.powf(m) * self.raw(x) } else { 0.0 };
        match self.family {
            SourceFamily::Indicator { a, b, .. } | SourceFamily::PowerBump { a, b, .. } => {
                let hi = b.min(cut);
                if hi <= a {
                    return Ok(0.0);
                }
                if a == 0.0 {
                    // moment of the power law must be integrable at 0
                    let p = match self.family {
                        SourceFamily::PowerBump { p, .. } => p,
                        _ => 0.0,
                    };
                    if m - p <= -1.0 {
                        return Err(Error::Divergent(format!("moment of order {m} diverges at 0")));
                    }
                }
                quadrature::integrate(f, a, hi, MOMENT_RTOL)
            }
            SourceFamily::PowerExpcut { p, x_c, .. } => {
                if m - p + 1.0 <= 0.0 {
                    return Err(Error::Divergent(format!("moment of order {m} diverges at 0")));
                }
                let split = x_c.min(cut);
                let head = quadrature::integrate(f, 0.0, split, MOMENT_RTOL)?;
                let tail = if cut.is_finite() {
                    quadrature::integrate(f, split, cut, MOMENT_RTOL)?
                } else {
                    quadrature::integrate_to_infinity(f, split, MOMENT_RTOL)?
                };
                Ok(head + tail)
            }
        }
    }

    /// Bin averages `(1/Δx_i) ∫_{bin i} S_δ`, so that discrete number and
    /// every discrete integral of the source match the continuous ones on
    /// the grid's range.
    pub fn project(&self, grid: &Grid) -> Result<Vec<f64>> {
        let cut = self.cutoff();
        let e = grid.edges();
        (0..grid.len())
            .map(|i| {
                let lo = e[i];
                let hi = e[i + 1].min(cut);
                if hi <= lo || self.is_zero() {
                    return Ok(0.0);
                }
                let integral = match self.family {
                    SourceFamily::Indicator { c, a, b } => power_integral(c, 0.0, a.max(lo), b.min(hi), 0.0)?,
                    SourceFamily::PowerBump { c, a, b, p } => power_integral(c, p, a.max(lo), b.min(hi), 0.0)?,
                    SourceFamily::PowerExpcut { .. } => {
                        quadrature::integrate(|x| self.raw(x), lo, hi, 1e-12)?
                    }
                };
                Ok(integral / grid.widths()[i])
            })
            .collect()
    }

    pub fn from_config(v: &Value) -> Result<SourceSpec> {
        let obj = v
            .as_object()
            .ok_or_else(|| Error::Config("source: expected a JSON object".into()))?;
        let fam = obj
            .get("family")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Config("source: missing string key \"family\"".into()))?;
        let keys: &[&str] = match fam {
            "indicator" => &["c", "a", "b"],
            "power_bump" => &["c", "a", "b", "p"],
            "power_expcut" => &["c", "p", "x_c"],
            other => return Err(Error::Config(format!("source: unknown family \"{other}\""))),
        };
        if let Some(extra) = obj.keys().find(|k| *k != "family" && !keys.contains(&k.as_str())) {
            return Err(Error::Config(format!("source: unexpected key \"{extra}\" for family \"{fam}\"")));
        }
        let num = |key: &str| -> Result<f64> {
            obj.get(key)
                .and_then(Value::as_f64)
                .ok_or_else(|| Error::Config(format!("source: missing numeric key \"{key}\"")))
        };
        let family = match fam {
            "indicator" => SourceFamily::Indicator { c: num("c")?, a: num("a")?, b: num("b")? },
            "power_bump" => SourceFamily::PowerBump { c: num("c")?, a: num("a")?, b: num("b")?, p: num("p")? },
            _ => SourceFamily::PowerExpcut { c: num("c")?, p: num("p")?, x_c: num("x_c")? },
        };
        SourceSpec::new(family).map_err(|e| Error::Config(format!("source: {e}")))
    }
}

/// `∫_lo^hi c x^{m−p} dx` (zero when the interval is empty).
fn power_integral(c: f64, p: f64, lo: f64, hi: f64, m: f64) -> Result<f64> {
    if hi <= lo || c == 0.0 {
        return Ok(0.0);
    }
    let q = m - p;
    if lo == 0.0 && q <= -1.0 {
        return Err(Error::Divergent(format!(
            "∫ x^{q} diverges at 0 (order {m}, exponent {p})"
        )));
    }
    let v = if (q + 1.0).abs() < 1e-14 {
        (hi / lo).ln()
    } else {
        (hi.powf(q + 1.0) - lo.powf(q + 1.0)) / (q + 1.0)
    };
    Ok(c * v)
}
