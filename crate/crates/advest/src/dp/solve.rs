//! Backward induction on the discretized state space.
//!
//! Values are interpolated in consumption-equivalent units
//! `((1-nu) V)^(1/(1-nu))`, which is exactly linear in cash for the
//! frictionless CRRA economy and near-linear otherwise, so 200 exponential
//! nodes resolve policies to well under the oracle tolerances. Expected
//! continuation values are tabulated on a savings grid once per age, which
//! keeps the inner maximization to one interpolation per candidate.

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::grid::{bracket_sorted, StateGrid};
use super::processes::{ExogenousProcesses, Gender};
use crate::error::{Error, Result};
use crate::params::{
    bequest_utility_unchecked, crra_utility_unchecked, FiscalParams, PreferenceParams, TaxBase,
};

/// Floor for transformed values; keeps the inverse transform finite.
const VT_FLOOR: f64 = 1e-12;
/// Consumption used to evaluate utility at unreachable nodes below the
/// consumption floor (the transfer keeps such states off the path).
const EVAL_C_MIN: f64 = 1e-3;
/// Candidate points in the coarse scan before golden-section refinement.
const SCAN_POINTS: usize = 13;

/// Transfer that tops pre-transfer resources net of medical expenses up to
/// the consumption floor; positive only when the floor would otherwise be
/// unattainable with nonnegative assets.
#[inline]
pub fn government_transfer(pre_transfer_resources: f64, medical: f64, fiscal: &FiscalParams) -> f64 {
    (fiscal.consumption_floor - (pre_transfer_resources - medical)).max(0.0)
}

/// Savings carried into the next period plus the posttax flow on them,
/// before medical expenses and transfers.
#[inline]
pub fn net_resources(savings: f64, income_next: f64, r: f64, fiscal: &FiscalParams) -> f64 {
    match fiscal.tax_base {
        TaxBase::InterestAndIncome => {
            savings + fiscal.after_tax_income(r * savings + income_next)
        }
        TaxBase::InterestOnly => savings + fiscal.after_tax_income(r * savings) + income_next,
    }
}

#[inline]
fn to_equiv(v: f64, one_minus_nu: f64) -> f64 {
    ((one_minus_nu * v).max(VT_FLOOR)).powf(1.0 / one_minus_nu)
}

#[inline]
fn from_equiv(vt: f64, one_minus_nu: f64) -> f64 {
    vt.max(VT_FLOOR).powf(one_minus_nu) / one_minus_nu
}

/// Age-indexed consumption policy and value function on the state grid.
#[derive(Debug, Clone)]
pub struct PolicySolution {
    pub params: PreferenceParams,
    pub fiscal: FiscalParams,
    pub grid: StateGrid,
    /// Consumption, `[age][g][h][pi][zeta][x]` flattened.
    pub consumption: Vec<f64>,
    /// Value function, same layout.
    pub value: Vec<f64>,
    /// Hash of every model input, used to key the policy cache.
    pub param_hash: String,
}

impl PolicySolution {
    #[inline]
    fn age_offset(&self, t: u32) -> usize {
        self.grid.ages.index(t) * self.grid.states_per_age()
    }

    /// Consumption at an exact grid node.
    pub fn consumption_node(
        &self,
        t: u32,
        g: Gender,
        healthy: bool,
        pi_idx: usize,
        z_idx: usize,
        x_idx: usize,
    ) -> f64 {
        let i = self.age_offset(t)
            + self.grid.state_index(g.index(), healthy as usize, pi_idx, z_idx, x_idx);
        self.consumption[i]
    }

    /// Value at an exact grid node.
    pub fn value_node(
        &self,
        t: u32,
        g: Gender,
        healthy: bool,
        pi_idx: usize,
        z_idx: usize,
        x_idx: usize,
    ) -> f64 {
        let i = self.age_offset(t)
            + self.grid.state_index(g.index(), healthy as usize, pi_idx, z_idx, x_idx);
        self.value[i]
    }

    /// Consumption at a continuous (cash, PI) point, bilinear between nodes
    /// and clamped into the feasible band.
    pub fn consumption_at(
        &self,
        t: u32,
        g: Gender,
        healthy: bool,
        pi: f64,
        z_idx: usize,
        x: f64,
    ) -> f64 {
        let nx = self.grid.n_cash();
        let (pi_i, pw) = bracket_sorted(&self.grid.pi_nodes, pi);
        let (xi, xw) = self.grid.cash.locate(x.min(self.grid.cash.ceiling()));
        let xw = xw.min(1.0);
        let off = self.age_offset(t);
        let row_at = |p: usize| {
            let b = off + self.grid.state_index(g.index(), healthy as usize, p, z_idx, 0);
            let row = &self.consumption[b..b + nx];
            row[xi] * (1.0 - xw) + row[xi + 1] * xw
        };
        let c = row_at(pi_i) * (1.0 - pw) + row_at(pi_i + 1) * pw;
        let lo = self.fiscal.consumption_floor.min(x);
        c.clamp(lo, x.max(lo))
    }
}

/// Hash of the full model environment; identical inputs yield identical
/// solutions, so this keys the on-disk policy cache.
pub fn parameter_hash(
    params: &PreferenceParams,
    fiscal: &FiscalParams,
    procs: &ExogenousProcesses,
    grid: &StateGrid,
) -> String {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(params).expect("serializable"));
    hasher.update(serde_json::to_vec(fiscal).expect("serializable"));
    hasher.update(serde_json::to_vec(procs).expect("serializable"));
    hasher.update(serde_json::to_vec(grid).expect("serializable"));
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

struct SolveCtx<'a> {
    params: &'a PreferenceParams,
    fiscal: &'a FiscalParams,
    procs: &'a ExogenousProcesses,
    grid: &'a StateGrid,
    omn: f64,
}

impl<'a> SolveCtx<'a> {
    fn new(
        params: &'a PreferenceParams,
        fiscal: &'a FiscalParams,
        procs: &'a ExogenousProcesses,
        grid: &'a StateGrid,
    ) -> Self {
        Self { params, fiscal, procs, grid, omn: 1.0 - params.nu }
    }

    #[inline]
    fn ev_index(&self, g: usize, pi: usize, h: usize, z: usize) -> usize {
        (((g * self.grid.n_pi() + pi) * 2 + h) * self.grid.n_zeta() + z) * self.grid.n_cash()
    }
}

/// Tabulates the transformed expected continuation value over savings nodes
/// for every (g, h, pi, zeta), integrating the health transition, the
/// persistent-shock chain, and the transitory shock by quadrature.
fn compute_ev(ctx: &SolveCtx, t: u32, vt_next: &[f64]) -> Vec<f64> {
    let grid = ctx.grid;
    let (nx, nz, npi) = (grid.n_cash(), grid.n_zeta(), grid.n_pi());
    let ngh = grid.gh_nodes.len();
    let t1 = t + 1;
    let mut ev = vec![0.0; grid.states_per_age()];
    let block = 2 * nz * nx;
    ev.par_chunks_mut(block).enumerate().for_each(|(gp, chunk)| {
        let g = gp / npi;
        let pi_idx = gp % npi;
        let gender = if g == 0 { Gender::Female } else { Gender::Male };
        let piv = grid.pi_nodes[pi_idx];
        let y_next = ctx.procs.income(gender, piv, t1);
        // Medical expenses by next-period health, persistent node, and
        // quadrature node; independent of savings.
        let mut med = vec![0.0; 2 * nz * ngh];
        for h2 in 0..2 {
            let loc = ctx.procs.med_loc(gender, h2 == 1, piv, t1);
            let sc = ctx.procs.med_scale(gender, h2 == 1, piv, t1);
            for z2 in 0..nz {
                let zv = grid.zeta_nodes[z2];
                for k in 0..ngh {
                    let psi = zv + ctx.procs.sigma_xi * grid.gh_nodes[k];
                    med[(h2 * nz + z2) * ngh + k] =
                        (loc + sc * psi).exp().min(ctx.procs.medical_cap);
                }
            }
        }
        let ph = [
            ctx.procs.health_transition(gender, false, piv, t),
            ctx.procs.health_transition(gender, true, piv, t),
        ];
        let floor = ctx.fiscal.consumption_floor;
        let mut quad = vec![0.0; 2 * nz];
        let mut mixed = vec![0.0; 2 * nz];
        for si in 0..nx {
            let s = grid.cash.nodes()[si];
            let base = net_resources(s, y_next, ctx.params.r, ctx.fiscal);
            // Integrate the transitory shock at fixed (h', zeta').
            for h2 in 0..2 {
                for z2 in 0..nz {
                    let row_base = grid.state_index(g, h2, pi_idx, z2, 0);
                    let row = &vt_next[row_base..row_base + nx];
                    let mut acc = 0.0;
                    for k in 0..ngh {
                        let x_next = (base - med[(h2 * nz + z2) * ngh + k]).max(floor);
                        let (i, w) = grid.cash.locate(x_next);
                        let vt = row[i] * (1.0 - w) + row[i + 1] * w;
                        acc += grid.gh_weights[k] * from_equiv(vt, ctx.omn);
                    }
                    quad[h2 * nz + z2] = acc;
                }
            }
            // Mix over the persistent chain, then the health transition.
            for h2 in 0..2 {
                for z in 0..nz {
                    let mut acc = 0.0;
                    for z2 in 0..nz {
                        acc += grid.zeta_trans[z][z2] * quad[h2 * nz + z2];
                    }
                    mixed[h2 * nz + z] = acc;
                }
            }
            for h in 0..2 {
                for z in 0..nz {
                    let v = ph[h] * mixed[nz + z] + (1.0 - ph[h]) * mixed[z];
                    chunk[(h * nz + z) * nx + si] = to_equiv(v, ctx.omn);
                }
            }
        }
    });
    ev
}

/// Golden-section search for the maximum of a unimodal `f` on `[a, b]`.
fn golden_max(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    const INVPHI: f64 = 0.618_033_988_749_894_9;
    const INVPHI2: f64 = 0.381_966_011_250_105_15;
    let mut h = b - a;
    if h <= tol {
        let m = 0.5 * (a + b);
        return (m, f(m));
    }
    let mut c = a + INVPHI2 * h;
    let mut d = a + INVPHI * h;
    let mut yc = f(c);
    let mut yd = f(d);
    while h > tol {
        if yc >= yd {
            b = d;
            d = c;
            yd = yc;
            h = b - a;
            c = a + INVPHI2 * h;
            yc = f(c);
        } else {
            a = c;
            c = d;
            yc = yd;
            h = b - a;
            d = a + INVPHI * h;
            yd = f(d);
        }
    }
    if yc >= yd {
        (c, yc)
    } else {
        (d, yd)
    }
}

/// Solves one age given the (already tabulated) continuation table; `None`
/// marks the terminal age. Returns `(value, consumption)` slices.
fn solve_age(ctx: &SolveCtx, t: u32, ev: Option<&[f64]>) -> (Vec<f64>, Vec<f64>) {
    let grid = ctx.grid;
    let (nx, nz, npi) = (grid.n_cash(), grid.n_zeta(), grid.n_pi());
    let floor = ctx.fiscal.consumption_floor;
    let terminal = t == grid.ages.max;
    let has_bequest = ctx.params.has_bequest_motive();
    let n_rows = 2 * 2 * npi * nz;
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..n_rows)
        .into_par_iter()
        .map(|r| {
            let z = r % nz;
            let q = r / nz;
            let pi_idx = q % npi;
            let q2 = q / npi;
            let h = q2 % 2;
            let g = q2 / 2;
            let gender = if g == 0 { Gender::Female } else { Gender::Male };
            let piv = grid.pi_nodes[pi_idx];
            let surv = if terminal {
                0.0
            } else {
                ctx.procs.survival(gender, h == 1, piv, t)
            };
            let ev_row = ev.map(|e| {
                let b = ctx.ev_index(g, pi_idx, h, z);
                &e[b..b + nx]
            });
            let objective = |cons: f64, savings: f64| -> f64 {
                let mut cont = 0.0;
                if surv > 0.0 {
                    let row = ev_row.expect("continuation table present below terminal age");
                    let (i, w) = grid.cash.locate(savings);
                    let vt = row[i] * (1.0 - w) + row[i + 1] * w;
                    cont += surv * from_equiv(vt, ctx.omn);
                }
                if surv < 1.0 && has_bequest {
                    let estate = ctx.fiscal.estate_after_tax(savings);
                    cont += (1.0 - surv) * bequest_utility_unchecked(estate, ctx.params);
                }
                crra_utility_unchecked(cons, ctx.params.nu) + ctx.params.beta * cont
            };
            let mut vrow = vec![0.0; nx];
            let mut crow = vec![0.0; nx];
            for (xi, (vo, co)) in vrow.iter_mut().zip(crow.iter_mut()).enumerate() {
                let x = grid.cash.nodes()[xi];
                if x <= floor {
                    // Below the floor the transfer branch applies off-grid;
                    // the node consumes everything.
                    *co = x;
                    *vo = objective(x.max(EVAL_C_MIN), 0.0);
                    continue;
                }
                let f = |c: f64| objective(c, x - c);
                // Coarse scan, then golden-section inside the best bracket.
                let span = x - floor;
                let step = span / (SCAN_POINTS - 1) as f64;
                let mut best_j = 0;
                let mut best_y = f64::NEG_INFINITY;
                for j in 0..SCAN_POINTS {
                    let y = f(floor + step * j as f64);
                    if y > best_y {
                        best_y = y;
                        best_j = j;
                    }
                }
                let lo = floor + step * best_j.saturating_sub(1) as f64;
                let hi = (floor + step * (best_j + 1) as f64).min(x);
                let tol = (1e-6 * x).max(1e-4);
                let (mut c_star, mut y_star) = golden_max(&f, lo, hi, tol);
                // Corners: the floor and consume-everything.
                for cand in [floor, x] {
                    let y = f(cand);
                    if y > y_star {
                        y_star = y;
                        c_star = cand;
                    }
                }
                *co = c_star;
                *vo = y_star;
            }
            (vrow, crow)
        })
        .collect();
    let mut value = vec![0.0; grid.states_per_age()];
    let mut consumption = vec![0.0; grid.states_per_age()];
    for (r, (vrow, crow)) in rows.into_iter().enumerate() {
        value[r * nx..(r + 1) * nx].copy_from_slice(&vrow);
        consumption[r * nx..(r + 1) * nx].copy_from_slice(&crow);
    }
    (value, consumption)
}

/// One backward step: value and policy at age `t` from the value at `t + 1`
/// (raw units, `[g][h][pi][zeta][x]` layout).
pub fn bellman_step(
    v_next: &[f64],
    t: u32,
    params: &PreferenceParams,
    fiscal: &FiscalParams,
    procs: &ExogenousProcesses,
    grid: &StateGrid,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if t >= grid.ages.max {
        return Err(Error::Domain(format!(
            "bellman_step: t = {t} must lie below the terminal age {}",
            grid.ages.max
        )));
    }
    if v_next.len() != grid.states_per_age() {
        return Err(Error::Shape(format!(
            "bellman_step: v_next has {} entries, grid expects {}",
            v_next.len(),
            grid.states_per_age()
        )));
    }
    let ctx = SolveCtx::new(params, fiscal, procs, grid);
    let vt: Vec<f64> = v_next.par_iter().map(|&v| to_equiv(v, ctx.omn)).collect();
    let ev = compute_ev(&ctx, t, &vt);
    Ok(solve_age(&ctx, t, Some(&ev)))
}

/// Full backward induction from the terminal age down; deterministic for
/// identical inputs.
pub fn solve_policy(
    params: &PreferenceParams,
    fiscal: &FiscalParams,
    procs: &ExogenousProcesses,
    grid: &StateGrid,
) -> Result<PolicySolution> {
    fiscal.validate()?;
    procs.validate()?;
    grid.validate()?;
    if grid.pi_nodes != procs.pi_nodes {
        return Err(Error::Config("solve_policy: grid and process PI nodes differ".into()));
    }
    if grid.ages != procs.ages {
        return Err(Error::Config("solve_policy: grid and process age ranges differ".into()));
    }
    let ctx = SolveCtx::new(params, fiscal, procs, grid);
    let na = grid.ages.len();
    let spa = grid.states_per_age();
    let mut value = vec![0.0; na * spa];
    let mut consumption = vec![0.0; na * spa];
    let mut vt_next: Vec<f64> = Vec::new();
    for t in (grid.ages.min..=grid.ages.max).rev() {
        let ev = if t == grid.ages.max { None } else { Some(compute_ev(&ctx, t, &vt_next)) };
        let (v, c) = solve_age(&ctx, t, ev.as_deref());
        vt_next = v.par_iter().map(|&x| to_equiv(x, ctx.omn)).collect();
        let off = grid.ages.index(t) * spa;
        value[off..off + spa].copy_from_slice(&v);
        consumption[off..off + spa].copy_from_slice(&c);
    }
    let param_hash = parameter_hash(params, fiscal, procs, grid);
    Ok(PolicySolution {
        params: params.clone(),
        fiscal: fiscal.clone(),
        grid: grid.clone(),
        consumption,
        value,
        param_hash,
    })
}
