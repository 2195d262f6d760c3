//! Fixed-pivot discretisation of the coagulation operator
//!
//! `C f(x) = ½ ∫_0^x K(y, x−y) f(y) f(x−y) dy − f(x) ∫_0^∞ K(x, y) f(y) dy`.
//!
//! A pair of pivots `(x_i, x_j)` coalesces into `s = x_i + x_j`, which is
//! split between the neighbouring pivots `x_k ≤ s < x_{k+1}` so that both
//! number and mass are conserved. Pairs with `s` above the last pivot leave
//! the grid and are booked as overflow. Because the allocation is linear in
//! the pivot values of a test function, the discrete weak form
//! `½ ΣΣ χ_θ K φ φ Δx Δx` is an exact identity for grid test functions.

use crate::exec::Execution;
use crate::grid::{Grid, SizeDistribution};
use crate::kernels::Kernel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Split { k: usize, w_lo: f64, w_hi: f64 },
    Overflow,
}

#[derive(Debug, Clone, Copy)]
struct Contribution {
    i: u32,
    j: u32,
    weight: f64,
}

/// Precomputed rates and coalescence targets for every pivot pair.
#[derive(Debug, Clone)]
pub struct PairTable {
    grid: Grid,
    rates: Vec<f64>,
    targets: Vec<Target>,
    /// Per target bin, the contributing pairs `i ≤ j` in row-major order.
    gather: Vec<Vec<Contribution>>,
    execution: Execution,
}

/// Output of [`PairTable::apply`].
#[derive(Debug, Clone, PartialEq)]
pub struct Rates {
    pub gain: Vec<f64>,
    /// Part of `gain` from pairs that do not involve the receiving bin.
    pub cross_gain: Vec<f64>,
    /// `gain − cross_gain = self_rate · φ`: coalescences of a particle in
    /// bin k whose product is allotted back to bin k.
    pub self_rate: Vec<f64>,
    /// `Σ_j K_ij φ_j Δx_j`, the per-particle loss rate.
    pub loss_rate: Vec<f64>,
    pub overflow_number: f64,
    pub overflow_mass: f64,
}

impl Rates {
    pub fn dphi(&self, phi: &SizeDistribution) -> Vec<f64> {
        self.gain
            .iter()
            .zip(&self.loss_rate)
            .zip(phi.values())
            .map(|((g, l), p)| g - p * l)
            .collect()
    }
}

/// Value assigned to `θ(x_i + x_j)` when the pair leaves the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OverflowValue {
    /// The coalesced particle is removed; `θ(s) = 0`. This matches the
    /// operator's own bookkeeping.
    Removed,
    Constant(f64),
    /// `θ(s) = s`.
    Linear,
    /// `θ(s) = s^p`.
    Power(f64),
    /// `θ(s) = min{s, cap}^p / cap^p`.
    Capped { cap: f64, power: f64 },
    /// `θ(s) = 1` for `s < a`, else 0.
    Below(f64),
}

impl OverflowValue {
    #[inline]
    pub fn at(self, s: f64) -> f64 {
        match self {
            OverflowValue::Removed => 0.0,
            OverflowValue::Constant(c) => c,
            OverflowValue::Linear => s,
            OverflowValue::Power(p) => s.powf(p),
            OverflowValue::Capped { cap, power } => (s.min(cap) / cap).powf(power),
            OverflowValue::Below(a) => {
                if s < a {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Bounded test function given by its pivot values and an overflow rule.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    pub name: String,
    pub values: Vec<f64>,
    pub overflow: OverflowValue,
}

impl TestFunction {
    /// Samples `f` at the pivots; overflow pairs take `f(x_i + x_j)`
    /// through `overflow`.
    pub fn sample(name: impl Into<String>, grid: &Grid, f: impl Fn(f64) -> f64, overflow: OverflowValue) -> Self {
        TestFunction {
            name: name.into(),
            values: grid.pivots().iter().map(|&x| f(x)).collect(),
            overflow,
        }
    }

    /// `θ(x_i + x_j)` as the operator sees it.
    #[inline]
    pub fn at_sum(&self, target: &Target, s: f64) -> f64 {
        match *target {
            Target::Split { k, w_lo, w_hi } => {
                let hi = if w_hi != 0.0 { w_hi * self.values[k + 1] } else { 0.0 };
                w_lo * self.values[k] + hi
            }
            Target::Overflow => self.overflow.at(s),
        }
    }
}

impl PairTable {
    pub fn new(kernel: &Kernel, grid: &Grid) -> PairTable {
        Self::with_execution(kernel, grid, Execution::default())
    }

    pub fn with_execution(kernel: &Kernel, grid: &Grid, execution: Execution) -> PairTable {
        let n = grid.len();
        let x = grid.pivots();
        let last = x[n - 1];
        let mut rates = vec![0.0; n * n];
        let mut targets = vec![Target::Overflow; n * n];
        for i in 0..n {
            for j in i..n {
                let k_ij = kernel.rate(x[i], x[j]);
                let s = x[i] + x[j];
                let t = if s > last {
                    Target::Overflow
                } else {
                    // s > x_j ≥ x_0, so a floor pivot always exists
                    let k = grid.pivot_floor(s).unwrap_or(0);
                    if k == n - 1 || s == x[k] {
                        Target::Split { k, w_lo: 1.0, w_hi: 0.0 }
                    } else {
                        let w_lo = (x[k + 1] - s) / (x[k + 1] - x[k]);
                        Target::Split { k, w_lo, w_hi: 1.0 - w_lo }
                    }
                };
                rates[i * n + j] = k_ij;
                rates[j * n + i] = k_ij;
                targets[i * n + j] = t;
                targets[j * n + i] = t;
            }
        }
        let mut gather = vec![Vec::new(); n];
        for i in 0..n {
            for j in i..n {
                if let Target::Split { k, w_lo, w_hi } = targets[i * n + j] {
                    let (i, j) = (i as u32, j as u32);
                    gather[k].push(Contribution { i, j, weight: w_lo });
                    if w_hi != 0.0 {
                        gather[k + 1].push(Contribution { i, j, weight: w_hi });
                    }
                }
            }
        }
        PairTable { grid: grid.clone(), rates, targets, gather, execution }
    }

    pub fn set_execution(&mut self, execution: Execution) {
        self.execution = execution;
    }

    pub fn execution(&self) -> Execution {
        self.execution
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    #[inline]
    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.rates[i * self.len() + j]
    }

    #[inline]
    pub fn target(&self, i: usize, j: usize) -> Target {
        self.targets[i * self.len() + j]
    }

    /// Gain, loss rate and overflow fluxes at `phi`.
    pub fn apply(&self, phi: &SizeDistribution) -> Rates {
        let n = self.len();
        let x = self.grid.pivots();
        let dx = self.grid.widths();
        let f = phi.values();
        debug_assert_eq!(f.len(), n);
        // number per bin
        let num: Vec<f64> = f.iter().zip(dx).map(|(a, b)| a * b).collect();

        // Pairs with a partner in bin k that land (partly) back in bin k are
        // kept apart as a rate proportional to φ_k, so time stepping can
        // treat them implicitly.
        let gathered = self.execution.map_indexed(n, |k| {
            let (mut cross, mut own) = (0.0, 0.0);
            for c in &self.gather[k] {
                let (i, j) = (c.i as usize, c.j as usize);
                let rate = c.weight * self.rates[i * n + j];
                if i == k {
                    let half = if j == k { 0.5 } else { 1.0 };
                    own += half * rate * num[j];
                } else if j == k {
                    own += rate * num[i];
                } else {
                    let half = if i == j { 0.5 } else { 1.0 };
                    cross += half * rate * num[i] * num[j];
                }
            }
            (cross / dx[k], own)
        });
        let mut gain = Vec::with_capacity(n);
        let mut cross_gain = Vec::with_capacity(n);
        let mut self_rate = Vec::with_capacity(n);
        for (k, (c, own)) in gathered.into_iter().enumerate() {
            gain.push(c + own * f[k]);
            cross_gain.push(c);
            self_rate.push(own);
        }

        let rows = self.execution.map_indexed(n, |i| {
            let row = &self.rates[i * n..(i + 1) * n];
            let mut loss = 0.0;
            for (r, nj) in row.iter().zip(&num) {
                loss += r * nj;
            }
            let (mut on, mut om) = (0.0, 0.0);
            if num[i] != 0.0 {
                for j in i..n {
                    if self.targets[i * n + j] == Target::Overflow && num[j] != 0.0 {
                        let half = if i == j { 0.5 } else { 1.0 };
                        let flux = half * row[j] * num[i] * num[j];
                        on += flux;
                        om += flux * (x[i] + x[j]);
                    }
                }
            }
            (loss, on, om)
        });

        let mut loss_rate = Vec::with_capacity(n);
        let (mut overflow_number, mut overflow_mass) = (0.0, 0.0);
        for (l, on, om) in rows {
            loss_rate.push(l);
            overflow_number += on;
            overflow_mass += om;
        }
        Rates { gain, cross_gain, self_rate, loss_rate, overflow_number, overflow_mass }
    }

    /// `½ Σ_i Σ_j g(i, j) K_ij φ_i φ_j Δx_i Δx_j` over ordered pairs,
    /// reduced row by row in index order.
    pub fn pair_sum<G>(&self, phi: &SizeDistribution, g: G) -> f64
    where
        G: Fn(usize, usize, &Target) -> f64 + Sync + Send,
    {
        let n = self.len();
        let dx = self.grid.widths();
        let f = phi.values();
        let rows = self.execution.map_indexed(n, |i| {
            let ni = f[i] * dx[i];
            if ni == 0.0 {
                return 0.0;
            }
            let mut acc = 0.0;
            for j in 0..n {
                let nj = f[j] * dx[j];
                if nj == 0.0 {
                    continue;
                }
                let t = &self.targets[i * n + j];
                acc += g(i, j, t) * self.rates[i * n + j] * ni * nj;
            }
            acc
        });
        0.5 * rows.into_iter().fold(0.0, |a, b| a + b)
    }

    /// `½ ΣΣ χ_θ(x_i, x_j) K_ij φ_i φ_j Δx_i Δx_j` with
    /// `χ_θ = θ(x_i + x_j) − θ_i − θ_j`.
    pub fn weak_form(&self, phi: &SizeDistribution, theta: &TestFunction) -> f64 {
        let x = self.grid.pivots();
        self.pair_sum(phi, |i, j, t| {
            theta.at_sum(t, x[i] + x[j]) - theta.values[i] - theta.values[j]
        })
    }

    /// `½ ΣΣ_{overflow} θ(x_i + x_j) K φ φ Δx Δx`: what the declared overflow
    /// value adds on top of the operator's own (removal) bookkeeping.
    pub fn overflow_term(&self, phi: &SizeDistribution, theta: &TestFunction) -> f64 {
        let x = self.grid.pivots();
        self.pair_sum(phi, |i, j, t| match t {
            Target::Overflow => theta.overflow.at(x[i] + x[j]),
            Target::Split { .. } => 0.0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::SumPowerKernel;

    fn constant_kernel(k: f64) -> Kernel {
        Kernel::from(SumPowerKernel::exact(0.0, k).unwrap())
    }

    #[test]
    fn exact_pivot_hit() {
        let g = Grid::from_pivots(vec![1.0, 2.0], vec![1.0, 1.0]).unwrap();
        let t = PairTable::new(&constant_kernel(1.0), &g);
        assert_eq!(t.target(0, 0), Target::Split { k: 1, w_lo: 1.0, w_hi: 0.0 });
        assert_eq!(t.target(0, 1), Target::Overflow);
        assert_eq!(t.target(1, 1), Target::Overflow);
    }

    #[test]
    fn split_between_neighbours() {
        let g = Grid::from_pivots(vec![1.0, 2.0, 4.0], vec![1.0, 1.0, 1.0]).unwrap();
        let t = PairTable::new(&constant_kernel(1.0), &g);
        match t.target(0, 1) {
            Target::Split { k, w_lo, w_hi } => {
                assert_eq!(k, 1);
                assert_eq!((w_lo, w_hi), (0.5, 0.5));
                assert_eq!(w_lo * 2.0 + w_hi * 4.0, 3.0);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(t.target(1, 0), t.target(0, 1));
        assert_eq!(t.target(2, 1), Target::Overflow);
    }

    #[test]
    fn splitting_invariants_on_geometric_grid() {
        let g = Grid::geometric(1e-3, 1e6, 16).unwrap();
        let t = PairTable::new(&constant_kernel(1.0), &g);
        let x = g.pivots();
        for i in 0..g.len() {
            for j in 0..g.len() {
                assert_eq!(t.target(i, j), t.target(j, i));
                assert_eq!(t.rate(i, j), t.rate(j, i));
                if let Target::Split { k, w_lo, w_hi } = t.target(i, j) {
                    assert!((0.0..=1.0).contains(&w_lo) && (0.0..=1.0).contains(&w_hi));
                    assert_eq!(w_lo + w_hi, 1.0);
                    let s = x[i] + x[j];
                    let hi = if w_hi != 0.0 { w_hi * x[k + 1] } else { 0.0 };
                    assert!((w_lo * x[k] + hi - s).abs() <= 1e-12 * s);
                }
            }
        }
    }

    #[test]
    fn zero_state_is_fixed() {
        let g = Grid::geometric(1e-2, 1e2, 4).unwrap();
        let t = PairTable::new(&constant_kernel(1.0), &g);
        let r = t.apply(&SizeDistribution::zeros(g.len()));
        assert!(r.gain.iter().chain(&r.loss_rate).all(|&v| v == 0.0));
        assert_eq!((r.overflow_number, r.overflow_mass), (0.0, 0.0));
    }

    #[test]
    fn single_occupied_bin() {
        // pivots 1, 2, 4 with unit widths, K ≡ 2, n particles at x = 1
        let g = Grid::from_pivots(vec![1.0, 2.0, 4.0], vec![1.0, 1.0, 1.0]).unwrap();
        let t = PairTable::new(&constant_kernel(1.0), &g);
        let n = 3.0;
        let phi = SizeDistribution::new(vec![n, 0.0, 0.0]).unwrap();
        let r = t.apply(&phi);
        let d = r.dphi(&phi);
        assert_eq!(r.gain[1], n * n);
        assert_eq!(d[0], -2.0 * n * n);
        assert_eq!(r.overflow_number, 0.0);
    }

    #[test]
    fn operator_conserves_mass_with_overflow() {
        let g = Grid::geometric(1e-1, 1e2, 8).unwrap();
        let k = Kernel::from(SumPowerKernel::sandwich(0.5, 1.0, 1.5).unwrap());
        let t = PairTable::new(&k, &g);
        let phi = SizeDistribution::from_fn(&g, |x| x.powf(-1.2)).unwrap();
        let r = t.apply(&phi);
        let d = r.dphi(&phi);
        let mass = g.moment_of(&d, 1.0);
        let scale = g.moment_of(&r.gain, 1.0);
        assert!(r.overflow_mass > 0.0);
        assert!((mass + r.overflow_mass).abs() <= 1e-12 * scale);
    }

    #[test]
    fn sequential_and_parallel_agree_bitwise() {
        let g = Grid::geometric(1e-3, 1e4, 12).unwrap();
        let k = Kernel::from(SumPowerKernel::sandwich(0.3, 0.8, 1.2).unwrap());
        let mut t = PairTable::with_execution(&k, &g, Execution::Sequential);
        let phi = SizeDistribution::from_fn(&g, |x| (-x).exp() / x.sqrt()).unwrap();
        let a = t.apply(&phi);
        t.set_execution(Execution::Parallel);
        let b = t.apply(&phi);
        assert_eq!(a, b);
    }
}
