//! Adaptive Gauss–Kronrod (7/15) quadrature.

#![allow(clippy::excessive_precision)]

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Integrates `f` over the finite interval `[a, b]` to relative accuracy
/// `rel_tol` by global bisection of the worst subinterval.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Domain("quadrature bounds must be finite".into()));
    }
    if a == b {
        return Ok(0.0);
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let mut intervals = vec![{
        let (v, e) = gk15(&f, lo, hi);
        (lo, hi, v, e)
    }];
    for _ in 0..2000 {
        let total: f64 = intervals.iter().map(|s| s.2).sum();
        let err: f64 = intervals.iter().map(|s| s.3).sum();
        if !total.is_finite() {
            return Err(Error::Numerical("non-finite integrand".into()));
        }
        if err <= rel_tol * total.abs() || err <= 1e-300 {
            return Ok(sign * total);
        }
        let (idx, _) = intervals
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, s)| if s.3 > acc.1 { (i, s.3) } else { acc });
        let (x0, x1, _, _) = intervals.swap_remove(idx);
        let mid = 0.5 * (x0 + x1);
        if mid <= x0 || mid >= x1 {
            break;
        }
        let (v0, e0) = gk15(&f, x0, mid);
        let (v1, e1) = gk15(&f, mid, x1);
        intervals.push((x0, mid, v0, e0));
        intervals.push((mid, x1, v1, e1));
    }
    let total: f64 = intervals.iter().map(|s| s.2).sum();
    let err: f64 = intervals.iter().map(|s| s.3).sum();
    if err <= 1e3 * rel_tol * total.abs() {
        Ok(sign * total)
    } else {
        Err(Error::Numerical(format!(
            "quadrature did not reach tolerance (estimate {total:e}, error {err:e})"
        )))
    }
}

/// Integrates over `[a, ∞)` by splitting into geometrically growing panels
/// until the tail contribution is negligible.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(f: F, a: f64, rel_tol: f64) -> Result<f64> {
    let mut lo = a;
    let mut width = a.abs().max(1.0);
    let mut total = 0.0;
    for _ in 0..400 {
        let hi = lo + width;
        let part = integrate(&f, lo, hi, rel_tol * 0.1)?;
        total += part;
        if part.abs() <= 1e-3 * rel_tol * total.abs() && lo > a {
            return Ok(total);
        }
        lo = hi;
        width *= 2.0;
    }
    Err(Error::Divergent("integral over [a, ∞) does not settle".into()))
}
