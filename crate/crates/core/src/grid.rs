//! Geometric size mesh and discrete moments.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Geometric mesh `e_0 < … < e_N` with log-midpoint pivots.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    edges: Vec<f64>,
    pivots: Vec<f64>,
    widths: Vec<f64>,
    ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub bins_per_decade: u32,
}

impl GridConfig {
    pub fn build(&self) -> Result<Grid> {
        Grid::geometric(self.x_min, self.x_max, self.bins_per_decade)
    }
}

impl Grid {
    /// Covers `[x_min, x_max]` with `ceil(bins_per_decade · log10(x_max/x_min))`
    /// bins of constant ratio `10^(1/bins_per_decade)`.
    pub fn geometric(x_min: f64, x_max: f64, bins_per_decade: u32) -> Result<Grid> {
        if !(x_min > 0.0 && x_max > x_min && x_max.is_finite()) {
            return domain(format!("invalid grid range [{x_min}, {x_max}]"));
        }
        if bins_per_decade == 0 {
            return domain("bins_per_decade must be at least 1");
        }
        let bpd = f64::from(bins_per_decade);
        let decades = (x_max / x_min).log10();
        // guard against log10 landing a hair above an integer
        let n = ((bpd * decades) - 1e-9).ceil().max(1.0) as usize;
        let edges: Vec<f64> = (0..=n)
            .map(|i| x_min * 10f64.powf(i as f64 / bpd))
            .collect();
        Grid::from_edges(edges)
    }

    /// Builds a grid from explicit edges. The ratio invariant is only
    /// enforced by [`Grid::geometric`]; arbitrary increasing edges are
    /// accepted here so tests can construct small hand-made meshes.
    pub fn from_edges(edges: Vec<f64>) -> Result<Grid> {
        if edges.len() < 2 {
            return domain("a grid needs at least two edges");
        }
        if edges[0] <= 0.0 || edges.windows(2).any(|w| !(w[1] > w[0])) {
            return domain("grid edges must be positive and strictly increasing");
        }
        let pivots = edges.windows(2).map(|w| (w[0] * w[1]).sqrt()).collect();
        let widths = edges.windows(2).map(|w| w[1] - w[0]).collect();
        let ratio = edges[1] / edges[0];
        Ok(Grid { edges, pivots, widths, ratio })
    }

    /// Grid with prescribed pivots and widths, used for single-bin and
    /// hand-evaluated examples. Edges are reconstructed as pivot ± width/2
    /// and are informational only.
    pub fn from_pivots(pivots: Vec<f64>, widths: Vec<f64>) -> Result<Grid> {
        if pivots.is_empty() || pivots.len() != widths.len() {
            return domain("pivots and widths must be non-empty and aligned");
        }
        if pivots.windows(2).any(|w| !(w[1] > w[0])) || pivots[0] <= 0.0 {
            return domain("pivots must be positive and strictly increasing");
        }
        if widths.iter().any(|&w| !(w > 0.0)) {
            return domain("widths must be positive");
        }
        let mut edges: Vec<f64> = pivots
            .iter()
            .zip(&widths)
            .map(|(&x, &w)| (x - 0.5 * w).max(x * 1e-3))
            .collect();
        let last = pivots.len() - 1;
        edges.push(pivots[last] + 0.5 * widths[last]);
        let ratio = edges[1] / edges[0];
        Ok(Grid { edges, pivots, widths, ratio })
    }

    pub fn len(&self) -> usize {
        self.pivots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pivots.is_empty()
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn pivots(&self) -> &[f64] {
        &self.pivots
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn x_min(&self) -> f64 {
        self.edges[0]
    }

    pub fn x_max(&self) -> f64 {
        self.edges[self.edges.len() - 1]
    }

    /// Discrete moment `Σ x_i^m φ_i Δx_i`, summed left to right.
    pub fn moment(&self, phi: &SizeDistribution, m: f64) -> f64 {
        self.moment_of(phi.values(), m)
    }

    pub fn moment_of(&self, values: &[f64], m: f64) -> f64 {
        debug_assert_eq!(values.len(), self.len());
        let mut acc = 0.0;
        for ((&x, &dx), &v) in self.pivots.iter().zip(&self.widths).zip(values) {
            if v != 0.0 {
                acc += x.powf(m) * v * dx;
            }
        }
        acc
    }

    /// `Σ θ_i v_i Δx_i`.
    pub fn pair(&self, theta: &[f64], values: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((&t, &v), &dx) in theta.iter().zip(values).zip(&self.widths) {
            acc += t * v * dx;
        }
        acc
    }

    /// Largest `k` with `x_k ≤ s`, or `None` when `s` lies below the first pivot.
    pub fn pivot_floor(&self, s: f64) -> Option<usize> {
        let idx = self.pivots.partition_point(|&x| x <= s);
        idx.checked_sub(1)
    }
}

/// Number density per unit size at each pivot.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeDistribution(Vec<f64>);

impl SizeDistribution {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(Error::Domain(format!("density at bin {i} is {v}")));
        }
        Ok(SizeDistribution(values))
    }

    pub fn zeros(n: usize) -> Self {
        SizeDistribution(vec![0.0; n])
    }

    /// Samples `f` at the pivots of `grid`.
    pub fn from_fn(grid: &Grid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid.pivots().iter().map(|&x| f(x)).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        SizeDistribution(values)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }
}
