//! Coagulation kernels, their structural hypotheses, and the reduction of
//! two-exponent kernels to sum-power form.
//!
//! Two families are supported:
//!
//! * sum-power kernels, bounded by `k1 (x^λ + y^λ) ≤ K ≤ k2 (x^λ + y^λ)`;
//! * two-exponent kernels bounded by multiples of
//!   `x^{γ+α} y^{−α} + x^{−α} y^{γ+α}`.
//!
//! A two-exponent kernel becomes a sum-power kernel of degree `|γ + 2α|`
//! after multiplication by `(xy)^{−θ}`, `θ = min{γ+α, −α}`; stationary
//! densities transform as `f ↦ x^θ f`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::Value;

use crate::error::{domain, Error, Result};
use crate::grid::{Grid, SizeDistribution};

pub type RateFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// How the rate sits between the two bounding envelopes.
#[derive(Clone)]
pub enum Shape {
    /// `K = k · envelope` with `k1 = k2 = k`.
    ExactSum,
    /// `K = k1 · envelope + (k2 − k1) · 2 (xy)^{h/2}`, where `h` is the
    /// degree of the envelope. By AM–GM the second term lies between zero
    /// and `(k2 − k1) · envelope`, so the sandwich holds with both constants
    /// attained asymptotically.
    Blended,
    /// Black-box symmetric evaluator with declared constants.
    Custom(RateFn),
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::ExactSum => write!(f, "ExactSum"),
            Shape::Blended => write!(f, "Blended"),
            Shape::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SumPowerKernel {
    pub lambda: f64,
    pub k1: f64,
    pub k2: f64,
    pub shape: Shape,
}

#[derive(Debug, Clone)]
pub struct GeneralKernel {
    pub gamma: f64,
    pub alpha: f64,
    pub k1: f64,
    pub k2: f64,
    pub shape: Shape,
}

/// `K_θ(x, y) = (xy)^{−θ} K(x, y)` for a two-exponent base kernel.
#[derive(Debug, Clone)]
pub struct ReducedKernel {
    pub base: GeneralKernel,
    pub theta: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone)]
pub enum Kernel {
    SumPower(SumPowerKernel),
    General(GeneralKernel),
    Reduced(ReducedKernel),
}

fn check_constants(k1: f64, k2: f64) -> Result<()> {
    if !(k1 > 0.0 && k2 >= k1 && k2.is_finite()) {
        return domain(format!("kernel constants must satisfy 0 < k1 ≤ k2 (got {k1}, {k2})"));
    }
    Ok(())
}

fn check_shape(shape: &Shape, k1: f64, k2: f64) -> Result<()> {
    if matches!(shape, Shape::ExactSum) && k1 != k2 {
        return domain("exact-sum kernels need k1 = k2");
    }
    Ok(())
}

impl SumPowerKernel {
    pub fn new(lambda: f64, k1: f64, k2: f64, shape: Shape) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return domain(format!("homogeneity degree must be ≥ 0 (got {lambda})"));
        }
        check_constants(k1, k2)?;
        check_shape(&shape, k1, k2)?;
        Ok(SumPowerKernel { lambda, k1, k2, shape })
    }

    /// `k (x^λ + y^λ)`.
    pub fn exact(lambda: f64, k: f64) -> Result<Self> {
        Self::new(lambda, k, k, Shape::ExactSum)
    }

    /// Exact sum when `k1 = k2`, blended otherwise.
    pub fn sandwich(lambda: f64, k1: f64, k2: f64) -> Result<Self> {
        let shape = if k1 == k2 { Shape::ExactSum } else { Shape::Blended };
        Self::new(lambda, k1, k2, shape)
    }

    fn envelope(&self, x: f64, y: f64) -> f64 {
        x.powf(self.lambda) + y.powf(self.lambda)
    }

    fn rate(&self, x: f64, y: f64) -> f64 {
        match &self.shape {
            Shape::ExactSum => self.k1 * self.envelope(x, y),
            Shape::Blended => {
                self.k1 * self.envelope(x, y)
                    + (self.k2 - self.k1) * 2.0 * (x * y).powf(0.5 * self.lambda)
            }
            Shape::Custom(f) => f(x, y),
        }
    }
}

impl GeneralKernel {
    pub fn new(gamma: f64, alpha: f64, k1: f64, k2: f64, shape: Shape) -> Result<Self> {
        if !(gamma.is_finite() && alpha.is_finite()) {
            return domain("kernel exponents must be finite");
        }
        check_constants(k1, k2)?;
        check_shape(&shape, k1, k2)?;
        Ok(GeneralKernel { gamma, alpha, k1, k2, shape })
    }

    pub fn exact(gamma: f64, alpha: f64, k: f64) -> Result<Self> {
        Self::new(gamma, alpha, k, k, Shape::ExactSum)
    }

    fn envelope(&self, x: f64, y: f64) -> f64 {
        let a = self.gamma + self.alpha;
        let b = -self.alpha;
        x.powf(a) * y.powf(b) + x.powf(b) * y.powf(a)
    }

    fn rate(&self, x: f64, y: f64) -> f64 {
        match &self.shape {
            Shape::ExactSum => self.k1 * self.envelope(x, y),
            Shape::Blended => {
                self.k1 * self.envelope(x, y)
                    + (self.k2 - self.k1) * 2.0 * (x * y).powf(0.5 * self.gamma)
            }
            Shape::Custom(f) => f(x, y),
        }
    }

    pub fn theta(&self) -> f64 {
        (self.gamma + self.alpha).min(-self.alpha)
    }

    pub fn reduced_lambda(&self) -> f64 {
        (self.gamma + 2.0 * self.alpha).abs()
    }
}

impl Kernel {
    /// `K(x, y)` without domain checks.
    #[inline]
    pub fn rate(&self, x: f64, y: f64) -> f64 {
        match self {
            Kernel::SumPower(k) => k.rate(x, y),
            Kernel::General(k) => k.rate(x, y),
            Kernel::Reduced(k) => (x * y).powf(-k.theta) * k.base.rate(x, y),
        }
    }

    /// `K(x, y)` for positive sizes.
    pub fn eval(&self, x: f64, y: f64) -> Result<f64> {
        if !(x > 0.0 && y > 0.0) {
            return domain(format!("kernel evaluated at non-positive size ({x}, {y})"));
        }
        Ok(self.rate(x, y))
    }

    /// The function `R` with `k1 R ≤ K ≤ k2 R`.
    pub fn envelope(&self, x: f64, y: f64) -> f64 {
        match self {
            Kernel::SumPower(k) => k.envelope(x, y),
            Kernel::General(k) => k.envelope(x, y),
            Kernel::Reduced(k) => x.powf(k.lambda) + y.powf(k.lambda),
        }
    }

    pub fn k1(&self) -> f64 {
        match self {
            Kernel::SumPower(k) => k.k1,
            Kernel::General(k) => k.k1,
            Kernel::Reduced(k) => k.base.k1,
        }
    }

    pub fn k2(&self) -> f64 {
        match self {
            Kernel::SumPower(k) => k.k2,
            Kernel::General(k) => k.k2,
            Kernel::Reduced(k) => k.base.k2,
        }
    }

    /// Degree `λ` of the sum-power envelope; `None` for two-exponent kernels
    /// that have not been reduced.
    pub fn lambda(&self) -> Option<f64> {
        match self {
            Kernel::SumPower(k) => Some(k.lambda),
            Kernel::General(_) => None,
            Kernel::Reduced(k) => Some(k.lambda),
        }
    }

    /// Degree used for moment bookkeeping: `λ` for sum-power kernels, `γ`
    /// for two-exponent kernels (the homogeneity of the envelope).
    pub fn moment_degree(&self) -> f64 {
        match self {
            Kernel::General(k) => k.gamma,
            other => other.lambda().unwrap_or(0.0),
        }
    }

    /// Parses the JSON kernel configuration. Exactly the keys relevant to the
    /// declared type are accepted: `sum_power` takes `lambda` and either `k`
    /// or the pair `k1`, `k2`; `product_power` takes `gamma`, `alpha` and the
    /// same constants.
    pub fn from_config(v: &Value) -> Result<Kernel> {
        let obj = v
            .as_object()
            .ok_or_else(|| Error::Config("kernel: expected a JSON object".into()))?;
        let ty = obj
            .get("type")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Config("kernel: missing string key \"type\"".into()))?;
        let (shape_keys, allowed): (&[&str], &[&str]) = match ty {
            "sum_power" => (&["lambda"], &["type", "lambda", "k", "k1", "k2"]),
            "product_power" => (&["gamma", "alpha"], &["type", "gamma", "alpha", "k", "k1", "k2"]),
            other => return Err(Error::Config(format!("kernel: unknown type \"{other}\""))),
        };
        if let Some(extra) = obj.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::Config(format!("kernel: unexpected key \"{extra}\" for type \"{ty}\"")));
        }
        let num = |key: &str| -> Result<f64> {
            obj.get(key)
                .and_then(Value::as_f64)
                .ok_or_else(|| Error::Config(format!("kernel: missing numeric key \"{key}\"")))
        };
        for key in shape_keys {
            num(key)?;
        }
        let (k1, k2) = match (obj.contains_key("k"), obj.contains_key("k1"), obj.contains_key("k2")) {
            (true, false, false) => (num("k")?, num("k")?),
            (false, true, true) => (num("k1")?, num("k2")?),
            _ => {
                return Err(Error::Config(
                    "kernel: give either \"k\" or both \"k1\" and \"k2\"".into(),
                ))
            }
        };
        let shape = if k1 == k2 { Shape::ExactSum } else { Shape::Blended };
        let kernel = match ty {
            "sum_power" => Kernel::SumPower(SumPowerKernel::new(num("lambda")?, k1, k2, shape)?),
            _ => Kernel::General(GeneralKernel::new(num("gamma")?, num("alpha")?, k1, k2, shape)?),
        };
        Ok(kernel)
    }
}

impl From<SumPowerKernel> for Kernel {
    fn from(k: SumPowerKernel) -> Self {
        Kernel::SumPower(k)
    }
}

impl From<GeneralKernel> for Kernel {
    fn from(k: GeneralKernel) -> Self {
        Kernel::General(k)
    }
}

#[derive(Debug, Clone)]
pub struct Reduction {
    pub theta: f64,
    pub reduced_lambda: f64,
    pub reduced_kernel: Kernel,
}

pub fn reduce_general(g: &GeneralKernel) -> Reduction {
    let theta = g.theta();
    let reduced_lambda = g.reduced_lambda();
    Reduction {
        theta,
        reduced_lambda,
        reduced_kernel: Kernel::Reduced(ReducedKernel {
            base: g.clone(),
            theta,
            lambda: reduced_lambda,
        }),
    }
}

/// Bin-wise `x_i^θ φ_i`.
pub fn transform_solution(phi: &SizeDistribution, grid: &Grid, theta: f64) -> SizeDistribution {
    let values = phi
        .values()
        .iter()
        .zip(grid.pivots())
        .map(|(&v, &x)| if theta == 0.0 { v } else { x.powf(theta) * v })
        .collect();
    SizeDistribution::from_vec_unchecked(values)
}

#[derive(Debug, Clone, Serialize)]
pub struct HypothesisReport {
    pub samples: usize,
    /// `min K / (k1 R)`; must be ≥ 1.
    pub min_lower_ratio: f64,
    /// `max K / (k2 R)`; must be ≤ 1.
    pub max_upper_ratio: f64,
    /// `max (K(x−y, y) − K(x, y)) / K(x, y)` over `0 < y < x`.
    pub worst_monotonicity: f64,
    /// Same for `(x−y)^{−θ} K(x−y, y) ≤ x^{−θ} K(x, y)` (two-exponent kernels).
    pub worst_transformed_monotonicity: Option<f64>,
    pub sandwich_pass: bool,
    pub monotonicity_pass: bool,
}

const HYP_TOL: f64 = 1e-12;

impl HypothesisReport {
    /// Two-exponent kernels are judged on the transformed monotonicity,
    /// which is what their reduction relies on.
    pub fn pass(&self) -> bool {
        let mono = self.worst_transformed_monotonicity.map_or(self.monotonicity_pass, |w| w <= HYP_TOL);
        self.sandwich_pass && mono
    }
}

fn log_uniform(rng: &mut ChaCha8Rng) -> f64 {
    10f64.powf(rng.gen_range(-6.0..=6.0))
}

/// Sampled check of the envelope sandwich and of the monotonicity condition
/// `K(x − y, y) ≤ K(x, y)` over log-uniform sizes in `[1e-6, 1e6]`.
pub fn verify_hypotheses(kernel: &Kernel, sample_count: usize, seed: u64) -> Result<HypothesisReport> {
    if sample_count == 0 {
        return domain("sample_count must be at least 1");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (k1, k2) = (kernel.k1(), kernel.k2());
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for _ in 0..sample_count {
        let (x, y) = (log_uniform(&mut rng), log_uniform(&mut rng));
        let k = kernel.rate(x, y);
        let r = kernel.envelope(x, y);
        lo = lo.min(k / (k1 * r));
        hi = hi.max(k / (k2 * r));
    }
    let theta = match kernel {
        Kernel::General(g) => Some(g.theta()),
        _ => None,
    };
    let mut worst = f64::NEG_INFINITY;
    let mut worst_t = f64::NEG_INFINITY;
    for _ in 0..sample_count {
        let x = log_uniform(&mut rng);
        let y = x * rng.gen_range(1e-9..1.0);
        let d = x - y;
        if !(d > 0.0 && y > 0.0) {
            continue;
        }
        let big = kernel.rate(x, y);
        worst = worst.max((kernel.rate(d, y) - big) / big);
        if let Some(t) = theta {
            let rhs = x.powf(-t) * big;
            worst_t = worst_t.max((d.powf(-t) * kernel.rate(d, y) - rhs) / rhs);
        }
    }
    Ok(HypothesisReport {
        samples: sample_count,
        min_lower_ratio: lo,
        max_upper_ratio: hi,
        worst_monotonicity: worst,
        worst_transformed_monotonicity: theta.map(|_| worst_t),
        sandwich_pass: lo >= 1.0 - HYP_TOL && hi <= 1.0 + HYP_TOL,
        monotonicity_pass: worst <= HYP_TOL,
    })
}
