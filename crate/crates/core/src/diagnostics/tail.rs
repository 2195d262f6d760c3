use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, SizeDistribution};

/// Fit window measured in decades below `x_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailWindow {
    /// Width of the window.
    pub span_decades: f64,
    /// Top of the domain left out because overflow removal distorts it.
    pub exclude_decades: f64,
}

impl Default for TailWindow {
    fn default() -> Self {
        TailWindow { span_decades: 1.5, exclude_decades: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailFit {
    pub slope: f64,
    pub stderr: f64,
    pub window: [f64; 2],
    pub points: usize,
}

/// Ordinary least squares slope of `log φ` against `log x` on the window.
pub fn tail_slope(grid: &Grid, phi: &SizeDistribution, window: TailWindow) -> Result<TailFit> {
    let hi = grid.x_max() * 10f64.powf(-window.exclude_decades);
    let lo = hi * 10f64.powf(-window.span_decades);
    let pts: Vec<(f64, f64)> = grid
        .pivots()
        .iter()
        .zip(phi.values())
        .filter(|(&x, _)| x >= lo && x <= hi)
        .map(|(&x, &v)| (x.ln(), v))
        .collect();
    if pts.len() < 8 {
        return Err(Error::Inapplicable(format!("only {} pivots in the tail window [{lo:e}, {hi:e}]", pts.len())));
    }
    if pts.iter().any(|&(_, v)| !(v > 0.0)) {
        return Err(Error::Inapplicable("density is not positive on the tail window".into()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(u, v) in &pts {
        sxx += (u - mx) * (u - mx);
        sxy += (u - mx) * (v.ln() - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = pts
        .iter()
        .map(|&(u, v)| {
            let e = v.ln() - intercept - slope * u;
            e * e
        })
        .sum();
    let stderr = (sse / (n - 2.0) / sxx).sqrt();
    Ok(TailFit { slope, stderr, window: [lo, hi], points: pts.len() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law() {
        let g = Grid::geometric(1e-3, 1e6, 16).unwrap();
        let phi = SizeDistribution::from_fn(&g, |x| 3.0 * x.powf(-1.5)).unwrap();
        let f = tail_slope(&g, &phi, TailWindow::default()).unwrap();
        assert!((f.slope + 1.5).abs() < 1e-6, "{f:?}");
        assert!(f.stderr < 1e-9);
        assert_eq!(f.points, 24);
    }

    #[test]
    fn too_few_points() {
        let g = Grid::geometric(1.0, 1e3, 2).unwrap();
        let phi = SizeDistribution::from_fn(&g, |x| 1.0 / x).unwrap();
        assert!(matches!(tail_slope(&g, &phi, TailWindow::default()), Err(Error::Inapplicable(_))));
    }
}
