//! The adversarial estimator: the minimax objective as a function of the
//! structural parameters, finite-difference outer gradients under common
//! random numbers, and the accelerated descent loop with multi-start.
//!
//! The optimizer works in box-normalized coordinates so the mixed scales of
//! `(nu, MPC, K)` share one step size; gradients are reported in natural
//! units in the traces.

use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dp::{solve_policy, ExogenousProcesses, StateGrid};
use crate::error::{Error, Result};
use crate::nn::{cross_entropy, train_discriminator, NetworkArch, TrainConfig};
use crate::params::{derive_bequest_transform, FiscalParams, PreferenceParams};
use crate::seed;
use crate::sim::{
    build_features, resample_rows, simulate_panel, InitialState, InputSpec, Panel, ShockSet,
};

/// A deterministic map from structural parameters to a simulated feature
/// matrix, with the randomness frozen inside.
pub trait Simulator: Sync {
    fn theta_dim(&self) -> usize;
    /// Number of simulated individuals (shock streams).
    fn sim_size(&self) -> usize;
    fn simulate(&self, theta: &[f64]) -> Result<Array2<f64>>;
    /// Copy driving the selected shock individuals; the bootstrap resamples
    /// simulated-side randomness through this.
    fn resample(&self, idx: &[usize]) -> Self;
}

/// Life-cycle model simulator: solve the policy at `theta = (nu, mpc, K)`,
/// roll the fixed shocks through it, and emit discriminator features.
#[derive(Debug, Clone)]
pub struct LifecycleSimulator {
    pub beta: f64,
    pub r: f64,
    pub fiscal: FiscalParams,
    pub procs: ExogenousProcesses,
    pub grid: StateGrid,
    pub shocks: ShockSet,
    pub initials: Vec<InitialState>,
    pub spec: InputSpec,
}

impl LifecycleSimulator {
    /// Panel at a parameter point (used by fit and counterfactual drivers).
    pub fn simulate_panel_at(&self, theta: &[f64]) -> Result<Panel> {
        let params = self.preference_params(theta)?;
        let policy = solve_policy(&params, &self.fiscal, &self.procs, &self.grid)?;
        simulate_panel(&policy, &self.procs, &self.shocks, &self.initials)
    }

    pub fn preference_params(&self, theta: &[f64]) -> Result<PreferenceParams> {
        if theta.len() != 3 {
            return Err(Error::Domain(format!(
                "lifecycle theta must be (nu, mpc, k), got {} coordinates",
                theta.len()
            )));
        }
        PreferenceParams::new(theta[0], theta[1], theta[2], self.beta, self.r)
    }
}

impl Simulator for LifecycleSimulator {
    fn theta_dim(&self) -> usize {
        3
    }

    fn sim_size(&self) -> usize {
        self.shocks.len()
    }

    fn simulate(&self, theta: &[f64]) -> Result<Array2<f64>> {
        let panel = self.simulate_panel_at(theta)?;
        Ok(build_features(&panel, self.spec)?.data)
    }

    fn resample(&self, idx: &[usize]) -> Self {
        let mut out = self.clone();
        out.shocks = self.shocks.resample(idx);
        out.initials = idx.iter().map(|&i| self.initials[i]).collect();
        out
    }
}

/// One-dimensional location model `x = theta + eps` with frozen normal
/// shocks; the closed-form benchmark for the whole estimation stack.
#[derive(Debug, Clone)]
pub struct GaussianLocationSimulator {
    pub eps: Vec<f64>,
}

impl GaussianLocationSimulator {
    pub fn new(m: usize, master_seed: u64) -> Result<Self> {
        if m == 0 {
            return Err(Error::Domain("simulator population must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(master_seed, 0x7000));
        Ok(Self { eps: (0..m).map(|_| rng.sample(StandardNormal)).collect() })
    }

    /// Mean of the frozen shocks; the oracle estimator subtracts this.
    pub fn shock_mean(&self) -> f64 {
        self.eps.iter().sum::<f64>() / self.eps.len() as f64
    }
}

impl Simulator for GaussianLocationSimulator {
    fn theta_dim(&self) -> usize {
        1
    }

    fn sim_size(&self) -> usize {
        self.eps.len()
    }

    fn simulate(&self, theta: &[f64]) -> Result<Array2<f64>> {
        if theta.len() != 1 {
            return Err(Error::Domain("gaussian location theta is one-dimensional".into()));
        }
        Ok(Array2::from_shape_fn((self.eps.len(), 1), |(i, _)| theta[0] + self.eps[i]))
    }

    fn resample(&self, idx: &[usize]) -> Self {
        Self { eps: idx.iter().map(|&i| self.eps[i]).collect() }
    }
}

/// Everything the objective needs besides `theta`: the (augmented) real
/// features, the frozen simulator, and the discriminator setup.
pub struct EstimationContext<S: Simulator> {
    pub real: Array2<f64>,
    pub simulator: S,
    pub arch: NetworkArch,
    pub train: TrainConfig,
}

impl<S: Simulator> EstimationContext<S> {
    /// Builds the context, augmenting the real sample up to the simulated
    /// size when the simulator is larger so both samples are even.
    pub fn new(
        real: Array2<f64>,
        simulator: S,
        arch: NetworkArch,
        train: TrainConfig,
        augment_seed: u64,
    ) -> Result<Self> {
        if real.nrows() == 0 {
            return Err(Error::Domain("estimation context: empty real sample".into()));
        }
        let m = simulator.sim_size();
        let real = if m > real.nrows() { resample_rows(&real, m, augment_seed) } else { real };
        Ok(Self { real, simulator, arch, train })
    }
}

/// The inner-maximized minimax value at `theta`: simulate, train the
/// discriminator to completion with the fixed seed, and score the samples.
pub fn objective<S: Simulator>(ctx: &EstimationContext<S>, theta: &[f64]) -> Result<f64> {
    let sim = ctx.simulator.simulate(theta)?;
    let net = train_discriminator(&ctx.real, &sim, &ctx.arch, &ctx.train)?;
    cross_entropy(&net, &ctx.real, &sim)
}

/// One objective evaluation at a fixed foreign parameter vector; ranks
/// parameter sets by fit on the same inputs and discriminator.
pub fn evaluate_foreign_estimates<S: Simulator>(
    ctx: &EstimationContext<S>,
    theta: &[f64],
) -> Result<f64> {
    objective(ctx, theta)
}

enum DiffPlan {
    Central { h: f64 },
    Forward { h: f64 },
    Backward { h: f64 },
}

fn diff_plans(theta: &[f64], steps: &[f64], lower: &[f64], upper: &[f64]) -> Result<Vec<DiffPlan>> {
    let mut plans = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        if steps[i] <= 0.0 {
            return Err(Error::Config(format!("fd_steps[{i}]: must be positive")));
        }
        let room_up = upper[i] - theta[i];
        let room_down = theta[i] - lower[i];
        let h = steps[i].min(room_up).min(room_down);
        // Shrink toward the boundary; fall back to a one-sided difference
        // when the iterate sits on the box edge.
        let min_h = steps[i] * 1e-6;
        if h > min_h {
            plans.push(DiffPlan::Central { h });
        } else if room_up > room_down {
            plans.push(DiffPlan::Forward { h: steps[i].min(room_up) });
        } else {
            plans.push(DiffPlan::Backward { h: steps[i].min(room_down) });
        }
    }
    Ok(plans)
}

/// Central finite differences per coordinate, shrunk (or one-sided) at the
/// search-box boundary; evaluations run in parallel.
pub fn numeric_gradient<F>(
    f: &F,
    theta: &[f64],
    steps: &[f64],
    lower: &[f64],
    upper: &[f64],
) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let (_, grad) = value_and_gradient(f, theta, steps, lower, upper)?;
    Ok(grad)
}

/// Objective value and finite-difference gradient in one parallel batch.
pub fn value_and_gradient<F>(
    f: &F,
    theta: &[f64],
    steps: &[f64],
    lower: &[f64],
    upper: &[f64],
) -> Result<(f64, Vec<f64>)>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let d = theta.len();
    if steps.len() != d || lower.len() != d || upper.len() != d {
        return Err(Error::Shape("gradient: theta/steps/bounds dimensions differ".into()));
    }
    let plans = diff_plans(theta, steps, lower, upper)?;
    // Point 0 is theta itself; each coordinate contributes two more.
    let mut points: Vec<Vec<f64>> = vec![theta.to_vec()];
    let mut slots: Vec<(usize, usize)> = Vec::with_capacity(d); // (plus, minus) indices
    for (i, plan) in plans.iter().enumerate() {
        let mut push_point = |offset: f64| -> usize {
            let mut p = theta.to_vec();
            p[i] += offset;
            points.push(p);
            points.len() - 1
        };
        let (plus, minus) = match plan {
            DiffPlan::Central { h } => (push_point(*h), push_point(-*h)),
            DiffPlan::Forward { h } => (push_point(*h), 0),
            DiffPlan::Backward { h } => (0, push_point(-*h)),
        };
        slots.push((plus, minus));
    }
    let values: Vec<Result<f64>> = points.par_iter().map(|p| f(p)).collect();
    let mut vals = Vec::with_capacity(values.len());
    for v in values {
        vals.push(v?);
    }
    let mut grad = Vec::with_capacity(d);
    for (i, plan) in plans.iter().enumerate() {
        let (pi, mi) = slots[i];
        let g = match plan {
            DiffPlan::Central { h } => (vals[pi] - vals[mi]) / (2.0 * h),
            DiffPlan::Forward { h } => (vals[pi] - vals[0]) / h,
            DiffPlan::Backward { h } => (vals[0] - vals[mi]) / h,
        };
        grad.push(g);
    }
    Ok((vals[0], grad))
}

/// Outer-loop step rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Accelerator {
    /// Plain gradient descent with the configured learning rate.
    Plain,
    /// Nesterov momentum: the gradient is evaluated at the lookahead point.
    Nag,
    /// Resilient propagation with per-coordinate adaptive steps.
    #[default]
    Rprop,
}

/// Step bounds for RPROP, in box-normalized units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RpropConfig {
    pub eta_up: f64,
    pub eta_down: f64,
    pub step_init: f64,
    pub step_min: f64,
    pub step_max: f64,
}

impl Default for RpropConfig {
    fn default() -> Self {
        Self { eta_up: 1.2, eta_down: 0.5, step_init: 0.02, step_min: 1e-4, step_max: 0.1 }
    }
}

/// Initialization rule for the restarts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitRule {
    /// Normal around the box center with sd = `sd_frac` of each box width.
    BoxCenterNormal { sd_frac: f64 },
    /// Normal around an explicit point in natural units (the Monte Carlo
    /// design draws around the truth).
    Normal { mean: Vec<f64>, sd: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Finite-difference steps in natural units.
    pub fd_steps: Vec<f64>,
    /// Learning rate for plain descent and NAG, in normalized units.
    pub learning_rate: f64,
    pub accelerator: Accelerator,
    pub nag_momentum: f64,
    pub rprop: RpropConfig,
    /// Stop when the max-norm of the normalized gradient falls below this.
    pub grad_tol: f64,
    pub max_iters: usize,
    pub restarts: usize,
    pub seed: u64,
    pub init: InitRule,
}

impl EstimationConfig {
    /// Sensible defaults for the life-cycle parameterization.
    pub fn lifecycle_default(seed_value: u64) -> Self {
        Self {
            lower: vec![1.5, 0.05, 1_000.0],
            upper: vec![8.0, 0.60, 30_000.0],
            fd_steps: vec![0.05, 0.005, 250.0],
            learning_rate: 0.05,
            accelerator: Accelerator::Rprop,
            nag_momentum: 0.9,
            rprop: RpropConfig::default(),
            grad_tol: 0.02,
            max_iters: 60,
            restarts: 2,
            seed: seed_value,
            init: InitRule::BoxCenterNormal { sd_frac: 0.15 },
        }
    }

    pub fn validate(&self, theta_dim: usize) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::Config("estimation.restarts: must be at least 1".into()));
        }
        if self.lower.len() != theta_dim
            || self.upper.len() != theta_dim
            || self.fd_steps.len() != theta_dim
        {
            return Err(Error::Config(format!(
                "estimation: bounds and fd_steps must have {theta_dim} coordinates"
            )));
        }
        for i in 0..theta_dim {
            if !(self.lower[i].is_finite() && self.upper[i].is_finite())
                || self.lower[i] >= self.upper[i]
            {
                return Err(Error::Config(format!(
                    "estimation.bounds[{i}]: need finite lower < upper"
                )));
            }
            if self.fd_steps[i] <= 0.0 {
                return Err(Error::Config(format!("estimation.fd_steps[{i}]: must be positive")));
            }
        }
        if self.max_iters == 0 {
            return Err(Error::Config("estimation.max_iters: must be at least 1".into()));
        }
        if let InitRule::Normal { mean, sd } = &self.init {
            if mean.len() != theta_dim || sd.len() != theta_dim {
                return Err(Error::Config(
                    "estimation.init: mean and sd must match the parameter dimension".into(),
                ));
            }
        }
        Ok(())
    }
}

/// One recorded outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub theta: Vec<f64>,
    pub loss: f64,
    /// Gradient in natural units.
    pub gradient: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartTrace {
    pub restart: usize,
    pub initial_theta: Vec<f64>,
    pub iterations: Vec<IterRecord>,
    pub converged: bool,
    pub final_theta: Vec<f64>,
    pub final_loss: f64,
}

/// Bequest transform of the winning point, attached when the parameter
/// vector is the life-cycle `(nu, mpc, K)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedBequest {
    pub theta_intensity: f64,
    pub asset_floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub theta_hat: Vec<f64>,
    pub derived: Option<DerivedBequest>,
    pub final_loss: f64,
    pub converged: bool,
    pub winner_restart: usize,
    pub traces: Vec<RestartTrace>,
    /// Not serialized: outputs must be byte-identical across reruns.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl EstimateResult {
    /// Fills in `(theta_intensity, asset_floor)` for a `(nu, mpc, K)` point.
    pub fn attach_derived(&mut self, beta: f64, r: f64) -> Result<()> {
        if self.theta_hat.len() != 3 {
            return Err(Error::Domain("derived transform needs a (nu, mpc, K) vector".into()));
        }
        let (ti, af) =
            derive_bequest_transform(self.theta_hat[0], self.theta_hat[1], self.theta_hat[2], beta, r)?;
        self.derived = Some(DerivedBequest { theta_intensity: ti, asset_floor: af });
        Ok(())
    }
}

fn draw_initial(cfg: &EstimationConfig, restart: usize) -> Vec<f64> {
    let d = cfg.lower.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, 0x600 + restart as u64));
    (0..d)
        .map(|i| {
            let z: f64 = rng.sample(StandardNormal);
            let v = match &cfg.init {
                InitRule::BoxCenterNormal { sd_frac } => {
                    let width = cfg.upper[i] - cfg.lower[i];
                    0.5 * (cfg.lower[i] + cfg.upper[i]) + sd_frac * width * z
                }
                InitRule::Normal { mean, sd } => mean[i] + sd[i] * z,
            };
            v.clamp(cfg.lower[i], cfg.upper[i])
        })
        .collect()
}

/// Runs the descent loop for every restart and returns the restart with the
/// lowest final loss, with full traces for all of them.
pub fn estimate<S: Simulator>(
    ctx: &EstimationContext<S>,
    cfg: &EstimationConfig,
) -> Result<EstimateResult> {
    cfg.validate(ctx.simulator.theta_dim())?;
    let start = Instant::now();
    let d = cfg.lower.len();
    let widths: Vec<f64> = (0..d).map(|i| cfg.upper[i] - cfg.lower[i]).collect();
    let f = |theta: &[f64]| objective(ctx, theta);
    let mut traces = Vec::with_capacity(cfg.restarts);
    for restart in 0..cfg.restarts {
        let initial_theta = draw_initial(cfg, restart);
        let mut theta = initial_theta.clone();
        let mut velocity = vec![0.0; d];
        let mut rprop_step: Vec<f64> = widths.iter().map(|w| cfg.rprop.step_init * w).collect();
        let mut rprop_prev = vec![0.0; d];
        let mut iterations: Vec<IterRecord> = Vec::new();
        let mut converged = false;
        for iter in 0..cfg.max_iters {
            // NAG evaluates at the lookahead point; the recorded iterate is
            // the evaluation point, so every trace entry stays in the box.
            let eval_theta: Vec<f64> = match cfg.accelerator {
                Accelerator::Nag => (0..d)
                    .map(|i| {
                        (theta[i] + cfg.nag_momentum * velocity[i])
                            .clamp(cfg.lower[i], cfg.upper[i])
                    })
                    .collect(),
                _ => theta.clone(),
            };
            let (loss, grad) =
                value_and_gradient(&f, &eval_theta, &cfg.fd_steps, &cfg.lower, &cfg.upper)?;
            iterations.push(IterRecord { theta: eval_theta.clone(), loss, gradient: grad.clone() });
            let scaled_norm = grad
                .iter()
                .zip(&widths)
                .map(|(g, w)| (g * w).abs())
                .fold(0.0f64, f64::max);
            if scaled_norm < cfg.grad_tol {
                converged = true;
                break;
            }
            if iter + 1 == cfg.max_iters {
                break;
            }
            match cfg.accelerator {
                Accelerator::Plain => {
                    for i in 0..d {
                        theta[i] -= cfg.learning_rate * grad[i] * widths[i] * widths[i];
                    }
                }
                Accelerator::Nag => {
                    for i in 0..d {
                        velocity[i] = cfg.nag_momentum * velocity[i]
                            - cfg.learning_rate * grad[i] * widths[i] * widths[i];
                        theta[i] += velocity[i];
                    }
                }
                Accelerator::Rprop => {
                    for i in 0..d {
                        let g = grad[i];
                        let prod = rprop_prev[i] * g;
                        if prod > 0.0 {
                            rprop_step[i] =
                                (rprop_step[i] * cfg.rprop.eta_up).min(cfg.rprop.step_max * widths[i]);
                        } else if prod < 0.0 {
                            rprop_step[i] = (rprop_step[i] * cfg.rprop.eta_down)
                                .max(cfg.rprop.step_min * widths[i]);
                            rprop_prev[i] = 0.0;
                            continue;
                        }
                        theta[i] -= g.signum() * rprop_step[i];
                        rprop_prev[i] = g;
                    }
                }
            }
            for i in 0..d {
                theta[i] = theta[i].clamp(cfg.lower[i], cfg.upper[i]);
            }
        }
        let last = iterations.last().expect("at least one iteration");
        traces.push(RestartTrace {
            restart,
            initial_theta,
            final_theta: last.theta.clone(),
            final_loss: last.loss,
            converged,
            iterations,
        });
    }
    let winner = traces
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.final_loss.partial_cmp(&b.1.final_loss).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    Ok(EstimateResult {
        theta_hat: traces[winner].final_theta.clone(),
        derived: None,
        final_loss: traces[winner].final_loss,
        converged: traces[winner].converged,
        winner_restart: winner,
        traces,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::{AgeRange, GridConfig, SyntheticCalibration};
    use crate::sim::{draw_shocks, draw_synthetic_initials, SyntheticInitials};
    use approx::assert_relative_eq;

    #[test]
    fn numeric_gradient_oracles() {
        let lower = vec![-10.0, -10.0, -10.0];
        let upper = vec![10.0, 10.0, 10.0];
        let steps = vec![1e-4, 1e-4, 1e-4];
        // Quadratic: exact under central differences.
        let target = [1.0, -2.0, 0.5];
        let f = |t: &[f64]| -> Result<f64> {
            Ok(t.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum())
        };
        let g = numeric_gradient(&f, &[0.0, 0.0, 0.0], &steps, &lower, &upper).unwrap();
        for i in 0..3 {
            assert_relative_eq!(g[i], 2.0 * (0.0 - target[i]), max_relative = 1e-6);
        }
        // Constant: zero vector.
        let c = |_: &[f64]| -> Result<f64> { Ok(7.0) };
        let g = numeric_gradient(&c, &[1.0, 2.0, 3.0], &steps, &lower, &upper).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-9));
        // sin(nu) + mpc^2 at (1, 0.5, 0) -> (cos 1, 1, 0).
        let s = |t: &[f64]| -> Result<f64> { Ok(t[0].sin() + t[1] * t[1]) };
        let g = numeric_gradient(&s, &[1.0, 0.5, 0.0], &steps, &lower, &upper).unwrap();
        assert_relative_eq!(g[0], 1.0f64.cos(), max_relative = 1e-6);
        assert_relative_eq!(g[1], 1.0, max_relative = 1e-6);
        assert!(g[2].abs() < 1e-9);
    }

    #[test]
    fn gradient_shrinks_at_the_boundary() {
        let f = |t: &[f64]| -> Result<f64> { Ok(t[0] * t[0]) };
        // theta on the upper edge: one-sided difference, still accurate.
        let g = numeric_gradient(&f, &[2.0], &[0.5], &[0.0], &[2.0]).unwrap();
        assert_relative_eq!(g[0], 4.0, max_relative = 0.2);
        // interior but close to the edge: shrunk central step.
        let g = numeric_gradient(&f, &[1.9], &[0.5], &[0.0], &[2.0]).unwrap();
        assert_relative_eq!(g[0], 3.8, max_relative = 1e-9);
    }

    fn toy_ctx(
        theta0: f64,
        n: usize,
        m: usize,
        seed_v: u64,
    ) -> (EstimationContext<GaussianLocationSimulator>, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed_v, 1));
        let real = Array2::from_shape_fn((n, 1), |_| {
            theta0 + rng.sample::<f64, _>(StandardNormal)
        });
        let real_mean = real.column(0).sum() / n as f64;
        let simulator = GaussianLocationSimulator::new(m, seed::derive(seed_v, 2)).unwrap();
        let oracle = real_mean - simulator.shock_mean();
        let arch = NetworkArch::discriminator(1, &[]).unwrap();
        let train = TrainConfig { epochs: 120, seed: seed::derive(seed_v, 3), ..TrainConfig::default() };
        let ctx = EstimationContext::new(real, simulator, arch, train, seed_v).unwrap();
        (ctx, oracle)
    }

    fn toy_cfg(seed_v: u64) -> EstimationConfig {
        EstimationConfig {
            lower: vec![-3.0],
            upper: vec![3.0],
            fd_steps: vec![0.05],
            learning_rate: 0.05,
            accelerator: Accelerator::Rprop,
            nag_momentum: 0.9,
            rprop: RpropConfig::default(),
            grad_tol: 0.01,
            max_iters: 25,
            restarts: 2,
            seed: seed_v,
            init: InitRule::BoxCenterNormal { sd_frac: 0.15 },
        }
    }

    #[test]
    fn self_matched_toy_objective_sits_at_the_bound() {
        // Real data built from the simulator's own shocks at theta0: the
        // samples coincide and the discriminator cannot separate them.
        let simulator = GaussianLocationSimulator::new(500, 9).unwrap();
        let real = simulator.simulate(&[0.7]).unwrap();
        let arch = NetworkArch::discriminator(1, &[]).unwrap();
        let train = TrainConfig { epochs: 150, seed: 4, ..TrainConfig::default() };
        let ctx = EstimationContext::new(real, simulator, arch, train, 5).unwrap();
        let self_loss = objective(&ctx, &[0.7]).unwrap();
        assert!(
            (self_loss - 2.0 * (0.5f64).ln()).abs() < 0.02,
            "self-match loss {self_loss}"
        );
        // A distant theta is strictly easier to tell apart.
        let far_loss = objective(&ctx, &[2.5]).unwrap();
        assert!(far_loss > self_loss + 0.1);
        // Determinism: same theta, same loss, bit for bit.
        assert_eq!(objective(&ctx, &[0.7]).unwrap(), self_loss);
        // Foreign evaluation is the same code path.
        assert_eq!(evaluate_foreign_estimates(&ctx, &[2.5]).unwrap(), far_loss);
    }

    #[test]
    fn common_random_numbers_make_the_objective_smooth() {
        let (ctx, _) = toy_ctx(0.5, 400, 400, 77);
        for &probe in &[-1.0, -0.2, 0.5, 1.1, 2.0] {
            let base = objective(&ctx, &[probe]).unwrap();
            let near = objective(&ctx, &[probe + 1e-3]).unwrap();
            assert!((near - base).abs() < 0.02, "chatter at {probe}: {base} vs {near}");
        }
    }

    #[test]
    fn toy_estimate_recovers_the_location() {
        let (ctx, oracle) = toy_ctx(0.8, 600, 600, 11);
        let cfg = toy_cfg(12);
        let res = estimate(&ctx, &cfg).unwrap();
        // Oracle sd of the difference-of-means estimator.
        let sd = (1.0 / 600.0f64 + 1.0 / 600.0).sqrt();
        assert!(
            (res.theta_hat[0] - oracle).abs() < 2.0 * sd,
            "theta_hat {} vs oracle {oracle}",
            res.theta_hat[0]
        );
        assert!(res.final_loss > -1.45 && res.final_loss < 0.0);
        // Projection safety and the monotone-trend property.
        for trace in &res.traces {
            for rec in &trace.iterations {
                assert!(rec.theta[0] >= cfg.lower[0] && rec.theta[0] <= cfg.upper[0]);
            }
            let n = trace.iterations.len();
            if trace.converged && n >= 4 {
                let min_first = trace.iterations[..n / 2]
                    .iter()
                    .map(|r| r.loss)
                    .fold(f64::INFINITY, f64::min);
                let min_second = trace.iterations[n / 2..]
                    .iter()
                    .map(|r| r.loss)
                    .fold(f64::INFINITY, f64::min);
                assert!(min_first >= min_second - 1e-9);
            }
        }
        // Determinism of the whole loop.
        let res2 = estimate(&ctx, &cfg).unwrap();
        assert_eq!(res.theta_hat, res2.theta_hat);
        assert_eq!(res.final_loss, res2.final_loss);
    }

    #[test]
    fn zero_restarts_is_a_config_error() {
        let (ctx, _) = toy_ctx(0.0, 50, 50, 21);
        let mut cfg = toy_cfg(22);
        cfg.restarts = 0;
        assert!(matches!(estimate(&ctx, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn lifecycle_objective_self_match() {
        // Panels simulated at theta0 with the estimation shocks themselves:
        // identical samples, loss at the theoretical floor.
        let ages = AgeRange { min: 70, max: 100 };
        let procs = SyntheticCalibration::default().generate(ages, 3, 2e6).unwrap();
        let cfg = GridConfig {
            n_cash: 40,
            cash_ceiling: 1_000_000.0,
            n_zeta: 2,
            n_gauss_hermite: 2,
            n_pi: 3,
            ..GridConfig::default()
        };
        let grid = StateGrid::build(&cfg, &procs).unwrap();
        let shocks = draw_shocks(300, ages, 55).unwrap();
        let initials = draw_synthetic_initials(&SyntheticInitials::default(), 300, 55);
        let simulator = LifecycleSimulator {
            beta: 0.971,
            r: 0.02,
            fiscal: FiscalParams::default(),
            procs,
            grid,
            shocks,
            initials,
            spec: InputSpec::X1,
        };
        let theta0 = [3.8, 0.25, 10_000.0];
        let real = simulator.simulate(&theta0).unwrap();
        let arch = NetworkArch::discriminator(14, &[5]).unwrap();
        let train = TrainConfig { epochs: 120, seed: 57, ..TrainConfig::default() };
        let ctx = EstimationContext::new(real, simulator, arch, train, 58).unwrap();
        let loss = objective(&ctx, &theta0).unwrap();
        assert!(
            (loss - 2.0 * (0.5f64).ln()).abs() < 0.05,
            "lifecycle self-match loss {loss}"
        );
        // Doubling risk aversion and gutting the bequest motive must fit
        // worse under the same shocks.
        let far = objective(&ctx, &[7.6, 0.55, 25_000.0]).unwrap();
        assert!(far > loss + 0.05, "far {far} vs self {loss}");
    }
}
