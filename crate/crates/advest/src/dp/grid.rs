//! State-space discretization for the backward-induction solver.

use serde::{Deserialize, Serialize};

use super::markov::{discretize_ar1, gauss_hermite_normal, rouwenhorst_stationary};
use super::processes::{AgeRange, ExogenousProcesses};
use crate::error::{Error, Result};

/// Exponentially spaced cash-on-hand grid: `x_i = scale * (exp(g*i) - 1)`
/// from zero to the ceiling, concentrating nodes where policies kink.
///
/// The spacing law is invertible, so bracket lookup is O(1).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CashGrid {
    nodes: Vec<f64>,
    scale: f64,
    growth: f64,
}

impl CashGrid {
    pub fn new(n: usize, ceiling: f64, scale: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config("grid.n_cash: need at least 2 cash nodes".into()));
        }
        if !(ceiling > 0.0) || !(scale > 0.0) {
            return Err(Error::Config("grid.cash: ceiling and scale must be positive".into()));
        }
        let growth = (ceiling / scale + 1.0).ln() / (n - 1) as f64;
        let mut nodes: Vec<f64> =
            (0..n).map(|i| scale * ((growth * i as f64).exp() - 1.0)).collect();
        nodes[0] = 0.0;
        nodes[n - 1] = ceiling;
        Ok(Self { nodes, scale, growth })
    }

    #[inline]
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    #[inline]
    pub fn ceiling(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    /// Bracketing index and interpolation weight for `x`.
    ///
    /// The weight is clamped at zero below the grid and left unclamped above
    /// the ceiling so callers can extrapolate linearly.
    #[inline]
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let n = self.nodes.len();
        if x <= 0.0 {
            return (0, 0.0);
        }
        let mut i = ((x / self.scale + 1.0).ln() / self.growth) as usize;
        i = i.min(n - 2);
        while i > 0 && x < self.nodes[i] {
            i -= 1;
        }
        while i < n - 2 && x >= self.nodes[i + 1] {
            i += 1;
        }
        let w = (x - self.nodes[i]) / (self.nodes[i + 1] - self.nodes[i]);
        (i, w.max(0.0))
    }
}

/// Linear interpolation bracket over a small sorted node set (PI axis).
#[inline]
pub(crate) fn bracket_sorted(nodes: &[f64], v: f64) -> (usize, f64) {
    let n = nodes.len();
    if v <= nodes[0] {
        return (0, 0.0);
    }
    if v >= nodes[n - 1] {
        return (n - 2, 1.0);
    }
    let mut i = match nodes.binary_search_by(|p| p.partial_cmp(&v).unwrap()) {
        Ok(i) => i,
        Err(i) => i - 1,
    };
    i = i.min(n - 2);
    (i, (v - nodes[i]) / (nodes[i + 1] - nodes[i]))
}

/// Discretization choices for the solver.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub n_cash: usize,
    pub cash_ceiling: f64,
    /// Concentration scale of the exponential cash grid, dollars.
    pub cash_scale: f64,
    pub n_zeta: usize,
    pub n_gauss_hermite: usize,
    pub n_pi: usize,
    pub age_min: u32,
    pub age_max: u32,
    pub medical_cap: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            n_cash: 200,
            cash_ceiling: 2_000_000.0,
            cash_scale: 10_000.0,
            n_zeta: 5,
            n_gauss_hermite: 5,
            n_pi: 10,
            age_min: 70,
            age_max: 100,
            medical_cap: 2_000_000.0,
        }
    }
}

impl GridConfig {
    pub fn ages(&self) -> AgeRange {
        AgeRange { min: self.age_min, max: self.age_max }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_cash < 2 || self.n_zeta < 2 || self.n_pi < 2 {
            return Err(Error::Config(
                "grid: n_cash, n_zeta and n_pi all need at least 2 nodes".into(),
            ));
        }
        if self.n_gauss_hermite == 0 {
            return Err(Error::Config("grid.n_gauss_hermite: must be at least 1".into()));
        }
        if self.age_max <= self.age_min {
            return Err(Error::Config("grid.age_max: must exceed age_min".into()));
        }
        if !(self.cash_ceiling > 0.0 && self.cash_scale > 0.0 && self.medical_cap > 0.0) {
            return Err(Error::Config("grid: monetary bounds must be positive".into()));
        }
        Ok(())
    }
}

/// Discretized state space shared by the solver and the simulator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateGrid {
    pub cash: CashGrid,
    pub zeta_nodes: Vec<f64>,
    /// Row-stochastic transition matrix of the persistent medical shock.
    pub zeta_trans: Vec<Vec<f64>>,
    /// Stationary distribution of the discretized chain.
    pub zeta_stationary: Vec<f64>,
    pub pi_nodes: Vec<f64>,
    pub ages: AgeRange,
    /// Standard-normal quadrature nodes for the transitory shock.
    pub gh_nodes: Vec<f64>,
    pub gh_weights: Vec<f64>,
}

impl StateGrid {
    /// Builds the grid; the PI nodes and age range are adopted from the
    /// process tables so the two can never drift apart.
    pub fn build(cfg: &GridConfig, procs: &ExogenousProcesses) -> Result<Self> {
        cfg.validate()?;
        if procs.ages.min != cfg.age_min || procs.ages.max != cfg.age_max {
            return Err(Error::Config(format!(
                "grid ages {}..{} do not match process tables {}..{}",
                cfg.age_min, cfg.age_max, procs.ages.min, procs.ages.max
            )));
        }
        let (zeta_nodes, zeta_trans) = discretize_ar1(procs.rho, procs.sigma_eps, cfg.n_zeta)?;
        let zeta_stationary = rouwenhorst_stationary(cfg.n_zeta);
        let (gh_nodes, gh_weights) = gauss_hermite_normal(cfg.n_gauss_hermite)?;
        let grid = Self {
            cash: CashGrid::new(cfg.n_cash, cfg.cash_ceiling, cfg.cash_scale)?,
            zeta_nodes,
            zeta_trans,
            zeta_stationary,
            pi_nodes: procs.pi_nodes.clone(),
            ages: procs.ages,
            gh_nodes,
            gh_weights,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cash.len() < 2 || self.zeta_nodes.len() < 2 || self.pi_nodes.len() < 2 {
            return Err(Error::Config("state grid: every axis needs at least 2 nodes".into()));
        }
        if self.cash.nodes()[0] < 0.0 {
            return Err(Error::Config("state grid: cash grid must start at or above 0".into()));
        }
        for row in &self.zeta_trans {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!(
                    "state grid: zeta transition row sums to {s}, expected 1"
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn n_cash(&self) -> usize {
        self.cash.len()
    }

    #[inline]
    pub fn n_zeta(&self) -> usize {
        self.zeta_nodes.len()
    }

    #[inline]
    pub fn n_pi(&self) -> usize {
        self.pi_nodes.len()
    }

    /// States per age: gender x health x PI x zeta x cash.
    pub fn states_per_age(&self) -> usize {
        2 * 2 * self.n_pi() * self.n_zeta() * self.n_cash()
    }

    /// Flat index within an age slice.
    #[inline]
    pub fn state_index(&self, g: usize, h: usize, pi: usize, z: usize, x: usize) -> usize {
        (((g * 2 + h) * self.n_pi() + pi) * self.n_zeta() + z) * self.n_cash() + x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::processes::SyntheticCalibration;
    use approx::assert_relative_eq;

    #[test]
    fn cash_grid_shape() {
        let g = CashGrid::new(200, 2e6, 1e4).unwrap();
        assert_eq!(g.len(), 200);
        assert_eq!(g.nodes()[0], 0.0);
        assert_relative_eq!(g.ceiling(), 2e6);
        // strictly increasing
        for w in g.nodes().windows(2) {
            assert!(w[1] > w[0]);
        }
        assert!(CashGrid::new(1, 2e6, 1e4).is_err());
    }

    #[test]
    fn cash_grid_locate_round_trips() {
        let g = CashGrid::new(120, 1e6, 5e3).unwrap();
        for &x in &[0.0, 1.0, 499.5, 12_345.0, 800_000.0, 1e6] {
            let (i, w) = g.locate(x);
            let back = g.nodes()[i] * (1.0 - w) + g.nodes()[i + 1] * w;
            assert_relative_eq!(back, x, max_relative = 1e-12, epsilon = 1e-9);
        }
        // extrapolation above the ceiling keeps the top bracket
        let (i, w) = g.locate(1.5e6);
        assert_eq!(i, g.len() - 2);
        assert!(w > 1.0);
        assert_eq!(g.locate(-5.0), (0, 0.0));
    }

    #[test]
    fn state_grid_builds_and_validates() {
        let ages = AgeRange { min: 70, max: 100 };
        let procs = SyntheticCalibration::default().generate(ages, 10, 2e6).unwrap();
        let cfg = GridConfig::default();
        let grid = StateGrid::build(&cfg, &procs).unwrap();
        assert_eq!(grid.n_pi(), 10);
        assert_eq!(grid.n_zeta(), 5);
        assert_eq!(grid.states_per_age(), 2 * 2 * 10 * 5 * 200);
        let s: f64 = grid.zeta_stationary.iter().sum();
        assert_relative_eq!(s, 1.0, max_relative = 1e-12);
        // mismatched ages are rejected
        let mut bad = cfg.clone();
        bad.age_max = 90;
        assert!(StateGrid::build(&bad, &procs).is_err());
    }
}
