//! Inference layers on top of the estimator: bootstrap confidence
//! intervals, the Monte Carlo harness, counterfactual decompositions of the
//! saving motives, fit profiles, and the autoencoder dimensionality probe.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adversarial::{
    estimate, EstimationConfig, EstimationContext, LifecycleSimulator, RestartTrace, Simulator,
};
use crate::dp::{solve_policy, ExogenousProcesses, Gender, StateGrid};
use crate::error::{Error, Result};
use crate::nn::{train_autoencoder, NetworkArch, TrainConfig};
use crate::params::{FiscalParams, PreferenceParams};
use crate::seed;
use crate::sim::{
    build_features, draw_shocks, draw_synthetic_initials, initials_from_panel, select_rows,
    simulate_panel, InputSpec, Panel, SyntheticInitials, N_WAVES, WAVE_YEARS,
};

/// Moments and quantiles of one parameter across replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub mean: f64,
    /// Undefined (None) with fewer than two replicates.
    pub variance: Option<f64>,
    pub q2_5: f64,
    pub q5: f64,
    pub q95: f64,
    pub q97_5: f64,
}

/// Linear-interpolation quantile of a sorted sample.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

/// Per-parameter summaries over replicate estimates.
pub fn summarize_replicates(replicates: &[Vec<f64>]) -> Result<Vec<ParamSummary>> {
    if replicates.is_empty() {
        return Err(Error::Domain("summary requires at least one replicate".into()));
    }
    let d = replicates[0].len();
    let n = replicates.len();
    let mut out = Vec::with_capacity(d);
    for j in 0..d {
        let mut vals: Vec<f64> = replicates.iter().map(|r| r[j]).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mean = vals.iter().sum::<f64>() / n as f64;
        let variance = (n >= 2).then(|| {
            vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0)
        });
        out.push(ParamSummary {
            mean,
            variance,
            q2_5: quantile(&vals, 0.025),
            q5: quantile(&vals, 0.05),
            q95: quantile(&vals, 0.95),
            q97_5: quantile(&vals, 0.975),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// Converged replicate estimates.
    pub replicates: Vec<Vec<f64>>,
    /// Replicates dropped for failing the convergence flag; never silent.
    pub excluded: usize,
    pub requested: usize,
    pub summary: Vec<ParamSummary>,
    pub seed: u64,
}

/// Resamples real rows and simulated shock individuals with replacement and
/// re-runs the full estimation per replicate. Every replicate shares one
/// initialization draw (only the data varies), so degenerate data collapses
/// the bootstrap distribution to a point.
pub fn bootstrap<S: Simulator>(
    real: &Array2<f64>,
    simulator: &S,
    arch: &NetworkArch,
    train: &TrainConfig,
    est_cfg: &EstimationConfig,
    replications: usize,
    master_seed: u64,
) -> Result<BootstrapResult> {
    if replications < 2 {
        return Err(Error::Domain("bootstrap: need at least 2 replications".into()));
    }
    let n = real.nrows();
    let m = simulator.sim_size();
    let mut replicates = Vec::new();
    let mut excluded = 0usize;
    // One initialization/training seed across replicates.
    let mut cfg_rep = est_cfg.clone();
    cfg_rep.seed = seed::derive(master_seed, 0xE57);
    let mut train_rep = train.clone();
    train_rep.seed = seed::derive(master_seed, 0xE58);
    for s in 0..replications {
        let rep_seed = seed::derive(master_seed, 0xB000 + s as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(rep_seed);
        let real_idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let sim_idx: Vec<usize> = (0..m).map(|_| rng.random_range(0..m)).collect();
        let real_s = select_rows(real, &real_idx);
        let sim_s = simulator.resample(&sim_idx);
        let ctx = EstimationContext::new(
            real_s,
            sim_s,
            arch.clone(),
            train_rep.clone(),
            seed::derive(rep_seed, 1),
        )?;
        let res = estimate(&ctx, &cfg_rep)?;
        if res.converged {
            replicates.push(res.theta_hat);
        } else {
            excluded += 1;
        }
    }
    if replicates.len() < 2 {
        return Err(Error::Domain(format!(
            "bootstrap: only {} of {replications} replicates converged; cannot summarize",
            replicates.len()
        )));
    }
    let summary = summarize_replicates(&replicates)?;
    Ok(BootstrapResult { replicates, excluded, requested: replications, summary, seed: master_seed })
}

/// One (input spec, architecture) cell of the Monte Carlo table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloCell {
    pub spec: InputSpec,
    pub arch_label: String,
    pub replicates: Vec<Vec<f64>>,
    pub excluded: usize,
    pub summary: Vec<ParamSummary>,
    /// Winning-restart trace per converged replication, for the loss-shape
    /// diagnostics and the trajectory plots.
    pub winner_traces: Vec<RestartTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloResult {
    pub truth: Vec<f64>,
    pub replications: usize,
    pub n_real: usize,
    pub n_sim: usize,
    pub cells: Vec<MonteCarloCell>,
    pub seed: u64,
}

/// Full Monte Carlo design: the data-generating truth, the model
/// environment, and the estimator grid to run on every synthetic economy.
#[derive(Debug, Clone)]
pub struct MonteCarloDesign {
    pub truth: [f64; 3],
    pub replications: usize,
    /// Individuals in each synthetic "real" economy.
    pub n_real: usize,
    /// Simulated individuals inside the estimator.
    pub n_sim: usize,
    pub beta: f64,
    pub rate: f64,
    pub fiscal: FiscalParams,
    pub procs: ExogenousProcesses,
    pub grid: StateGrid,
    pub initials: SyntheticInitials,
    pub cells: Vec<(InputSpec, NetworkArch)>,
    pub train: TrainConfig,
    pub estimation: EstimationConfig,
    pub seed: u64,
}

/// Generates `replications` synthetic economies at the truth and re-estimates
/// each one per estimator cell; fully deterministic given the master seed.
pub fn monte_carlo(design: &MonteCarloDesign) -> Result<MonteCarloResult> {
    if design.replications == 0 {
        return Err(Error::Domain("monte_carlo: need at least 1 replication".into()));
    }
    if design.cells.is_empty() {
        return Err(Error::Domain("monte_carlo: no estimator cells".into()));
    }
    let truth_params = PreferenceParams::new(
        design.truth[0],
        design.truth[1],
        design.truth[2],
        design.beta,
        design.rate,
    )?;
    // One policy solve serves every replication.
    let policy0 = solve_policy(&truth_params, &design.fiscal, &design.procs, &design.grid)?;
    let mut cells: Vec<MonteCarloCell> = design
        .cells
        .iter()
        .map(|(spec, arch)| MonteCarloCell {
            spec: *spec,
            arch_label: arch.describe(),
            replicates: Vec::new(),
            excluded: 0,
            summary: Vec::new(),
            winner_traces: Vec::new(),
        })
        .collect();
    for rep in 0..design.replications {
        let rep_seed = seed::derive(design.seed, 0xA000 + rep as u64);
        let real_shocks = draw_shocks(design.n_real, design.procs.ages, seed::derive(rep_seed, 1))?;
        let real_inits =
            draw_synthetic_initials(&design.initials, design.n_real, seed::derive(rep_seed, 2));
        let real_panel = simulate_panel(&policy0, &design.procs, &real_shocks, &real_inits)?;
        for (ci, (spec, arch)) in design.cells.iter().enumerate() {
            let real_features = build_features(&real_panel, *spec)?;
            let est_shocks =
                draw_shocks(design.n_sim, design.procs.ages, seed::derive(rep_seed, 3))?;
            let est_inits =
                initials_from_panel(&real_panel, design.n_sim, seed::derive(rep_seed, 4))?;
            let simulator = LifecycleSimulator {
                beta: design.beta,
                r: design.rate,
                fiscal: design.fiscal.clone(),
                procs: design.procs.clone(),
                grid: design.grid.clone(),
                shocks: est_shocks,
                initials: est_inits,
                spec: *spec,
            };
            let mut train_cfg = design.train.clone();
            train_cfg.seed = seed::derive(rep_seed, 5);
            let mut est_cfg = design.estimation.clone();
            est_cfg.seed = seed::derive(rep_seed, 6);
            let ctx = EstimationContext::new(
                real_features.data,
                simulator,
                arch.clone(),
                train_cfg,
                seed::derive(rep_seed, 7),
            )?;
            let res = estimate(&ctx, &est_cfg)?;
            if res.converged {
                cells[ci].replicates.push(res.theta_hat.clone());
                cells[ci].winner_traces.push(res.traces[res.winner_restart].clone());
            } else {
                cells[ci].excluded += 1;
            }
        }
    }
    for cell in &mut cells {
        if !cell.replicates.is_empty() {
            cell.summary = summarize_replicates(&cell.replicates)?;
        }
    }
    Ok(MonteCarloResult {
        truth: design.truth.to_vec(),
        replications: design.replications,
        n_real: design.n_real,
        n_sim: design.n_sim,
        cells,
        seed: design.seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CounterfactualMode {
    /// Baseline against itself; differences are exactly zero.
    None,
    /// Bequest incentive off (`theta = 0` via the `mpc = 1` sentinel).
    NoBequest,
    /// Medical-expense risk off (`sigma = 0`, expenses at their location).
    NoMedicalRisk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuintileRow {
    /// Permanent-income quintile, 1 (poorest) through 5.
    pub quintile: usize,
    /// Cumulative assets one wave before death, thousands of dollars.
    pub baseline: f64,
    pub counterfactual: f64,
    /// `(baseline - counterfactual) / baseline`, in percent.
    pub pct_difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualTable {
    pub mode: CounterfactualMode,
    pub rows: Vec<QuintileRow>,
    /// Individuals contributing to the bequest proxy (decedents by 2006).
    pub decedents: usize,
}

/// Balanced PI-quintile membership: rank by PI (ties by index), split into
/// five groups whose sizes differ by at most one.
pub fn pi_quintiles(pis: &[f64]) -> Vec<usize> {
    let n = pis.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| pis[a].partial_cmp(&pis[b]).unwrap().then(a.cmp(&b)));
    let mut quintile = vec![0usize; n];
    for (rank, &idx) in order.iter().enumerate() {
        quintile[idx] = (rank * 5) / n;
    }
    quintile
}

/// Assets at the last wave observed alive, for individuals who died by the
/// final wave; survivors are excluded from the bequest proxy.
fn before_death_assets(panel: &Panel) -> Vec<Option<f64>> {
    panel
        .individuals
        .iter()
        .map(|ind| {
            if ind.waves[N_WAVES - 1].alive {
                return None;
            }
            ind.waves.iter().rev().find(|w| w.alive).map(|w| w.assets)
        })
        .collect()
}

/// Re-solves and re-simulates under the modified primitives with the same
/// shocks, then sums before-death assets by baseline PI quintile.
pub fn counterfactual(
    simulator: &LifecycleSimulator,
    theta: &[f64],
    mode: CounterfactualMode,
) -> Result<CounterfactualTable> {
    let base_panel = simulator.simulate_panel_at(theta)?;
    let cf_panel = match mode {
        CounterfactualMode::None => simulator.simulate_panel_at(theta)?,
        CounterfactualMode::NoBequest => {
            simulator.simulate_panel_at(&[theta[0], 1.0, theta[2]])?
        }
        CounterfactualMode::NoMedicalRisk => {
            let mut cf = simulator.clone();
            cf.procs = simulator.procs.without_medical_risk();
            cf.simulate_panel_at(theta)?
        }
    };
    let pis: Vec<f64> = base_panel.individuals.iter().map(|i| i.pi).collect();
    let quintiles = pi_quintiles(&pis);
    let base_assets = before_death_assets(&base_panel);
    let cf_assets = before_death_assets(&cf_panel);
    let mut base_sum = [0.0f64; 5];
    let mut cf_sum = [0.0f64; 5];
    let mut decedents = 0usize;
    for i in 0..pis.len() {
        if let Some(a) = base_assets[i] {
            base_sum[quintiles[i]] += a;
            decedents += 1;
        }
        if let Some(a) = cf_assets[i] {
            cf_sum[quintiles[i]] += a;
        }
    }
    let rows = (0..5)
        .map(|q| {
            let b = base_sum[q] / 1_000.0;
            let c = cf_sum[q] / 1_000.0;
            let pct = if b != 0.0 { (b - c) / b * 100.0 } else { 0.0 };
            QuintileRow { quintile: q + 1, baseline: b, counterfactual: c, pct_difference: pct }
        })
        .collect();
    Ok(CounterfactualTable { mode, rows, decedents })
}

/// 1996 age band: 72-76, 77-81, 82-86, 87-91, 92 and older. Ages below 72
/// (possible in synthetic panels) fall into the first band.
pub fn cohort_of(age_1996: u32) -> usize {
    match age_1996 {
        0..=76 => 1,
        77..=81 => 2,
        82..=86 => 3,
        87..=91 => 4,
        _ => 5,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitGroupRow {
    pub cohort: usize,
    pub pi_quintile: usize,
    pub gender: Option<Gender>,
    pub wave_year: u32,
    pub n_real: usize,
    pub n_sim: usize,
    pub mean_real: Option<f64>,
    pub median_real: Option<f64>,
    pub mean_sim: Option<f64>,
    pub median_sim: Option<f64>,
}

fn median(sorted: &mut [f64]) -> f64 {
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Mean and median asset profiles per cohort x PI-quintile (x gender) group
/// and wave, for the real and simulated panels side by side. The optional
/// trimming drops observations above the given quantile of the real panel's
/// alive-wave asset distribution from both panels.
pub fn fit_profiles(
    real: &Panel,
    sim: &Panel,
    by_gender: bool,
    trim_quantile: Option<f64>,
) -> Result<Vec<FitGroupRow>> {
    real.validate()?;
    sim.validate()?;
    let threshold = match trim_quantile {
        Some(q) => {
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::Domain(format!("trim quantile {q} outside [0, 1]")));
            }
            let mut assets: Vec<f64> = real
                .individuals
                .iter()
                .flat_map(|i| i.waves.iter().filter(|w| w.alive).map(|w| w.assets))
                .collect();
            if assets.is_empty() {
                f64::INFINITY
            } else {
                assets.sort_by(|a, b| a.partial_cmp(b).unwrap());
                quantile(&assets, q)
            }
        }
        None => f64::INFINITY,
    };
    let collect = |panel: &Panel| -> (Vec<usize>, Vec<usize>) {
        let pis: Vec<f64> = panel.individuals.iter().map(|i| i.pi).collect();
        let quintiles = pi_quintiles(&pis);
        let cohorts: Vec<usize> =
            panel.individuals.iter().map(|i| cohort_of(i.age_1996)).collect();
        (quintiles, cohorts)
    };
    let (real_q, real_c) = collect(real);
    let (sim_q, sim_c) = collect(sim);
    let genders: Vec<Option<Gender>> = if by_gender {
        vec![Some(Gender::Female), Some(Gender::Male)]
    } else {
        vec![None]
    };
    let mut rows = Vec::new();
    for cohort in 1..=5usize {
        for piq in 1..=5usize {
            for g in &genders {
                for (wi, &year) in WAVE_YEARS.iter().enumerate() {
                    let gather = |panel: &Panel, qs: &[usize], cs: &[usize]| -> Vec<f64> {
                        panel
                            .individuals
                            .iter()
                            .enumerate()
                            .filter(|(i, ind)| {
                                cs[*i] == cohort
                                    && qs[*i] + 1 == piq
                                    && g.map_or(true, |gg| ind.gender == gg)
                                    && ind.waves[wi].alive
                                    && ind.waves[wi].assets <= threshold
                            })
                            .map(|(_, ind)| ind.waves[wi].assets)
                            .collect()
                    };
                    let mut rv = gather(real, &real_q, &real_c);
                    let mut sv = gather(sim, &sim_q, &sim_c);
                    let stat = |v: &mut Vec<f64>| -> (usize, Option<f64>, Option<f64>) {
                        if v.is_empty() {
                            (0, None, None)
                        } else {
                            let mean = v.iter().sum::<f64>() / v.len() as f64;
                            (v.len(), Some(mean), Some(median(v)))
                        }
                    };
                    let (n_real, mean_real, median_real) = stat(&mut rv);
                    let (n_sim, mean_sim, median_sim) = stat(&mut sv);
                    rows.push(FitGroupRow {
                        cohort,
                        pi_quintile: piq,
                        gender: *g,
                        wave_year: year,
                        n_real,
                        n_sim,
                        mean_real,
                        median_real,
                        mean_sim,
                        median_sim,
                    });
                }
            }
        }
    }
    Ok(rows)
}

/// One point of the bottleneck sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbePoint {
    pub bottleneck: usize,
    pub mse: f64,
    pub correlations: Vec<f64>,
}

/// Autoencoder sweep over bottleneck sizes, emitting the reconstruction MSE
/// and the per-column correlations for each size.
pub fn dimension_probe(
    data: &Array2<f64>,
    d_min: usize,
    d_max: usize,
    cfg: &TrainConfig,
) -> Result<Vec<ProbePoint>> {
    if d_min == 0 || d_min > d_max || d_max > data.ncols() {
        return Err(Error::Domain(format!(
            "dimension_probe: range {d_min}..={d_max} invalid for {} columns",
            data.ncols()
        )));
    }
    let mut out = Vec::with_capacity(d_max - d_min + 1);
    for d in d_min..=d_max {
        let mut cfg_d = cfg.clone();
        cfg_d.seed = seed::derive(cfg.seed, 0xD000 + d as u64);
        let (_, mse, correlations) = train_autoencoder(data, d, &cfg_d)?;
        out.push(ProbePoint { bottleneck: d, mse, correlations });
    }
    Ok(out)
}

/// R-squared of a full quadratic surface fitted to `(theta, loss)` points
/// by least squares; coordinates are standardized before fitting.
pub fn quadratic_fit_r2(points: &[(Vec<f64>, f64)]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::Domain("quadratic fit: no points".into()));
    }
    let d = points[0].0.len();
    let k = 1 + d + d * (d + 1) / 2;
    if points.len() <= k {
        return Err(Error::Domain(format!(
            "quadratic fit: need more than {k} points, got {}",
            points.len()
        )));
    }
    // Standardize each coordinate.
    let n = points.len();
    let mut mean = vec![0.0; d];
    let mut sd = vec![0.0; d];
    for (theta, _) in points {
        for j in 0..d {
            mean[j] += theta[j] / n as f64;
        }
    }
    for (theta, _) in points {
        for j in 0..d {
            sd[j] += (theta[j] - mean[j]).powi(2) / n as f64;
        }
    }
    for s in sd.iter_mut() {
        *s = s.sqrt().max(1e-12);
    }
    let design_row = |theta: &[f64]| -> Vec<f64> {
        let z: Vec<f64> = (0..d).map(|j| (theta[j] - mean[j]) / sd[j]).collect();
        let mut row = Vec::with_capacity(k);
        row.push(1.0);
        row.extend_from_slice(&z);
        for a in 0..d {
            for b in a..d {
                row.push(z[a] * z[b]);
            }
        }
        row
    };
    // Normal equations.
    let mut xtx = vec![vec![0.0; k]; k];
    let mut xty = vec![0.0; k];
    for (theta, y) in points {
        let row = design_row(theta);
        for a in 0..k {
            xty[a] += row[a] * y;
            for b in 0..k {
                xtx[a][b] += row[a] * row[b];
            }
        }
    }
    let beta = solve_linear(&mut xtx, &mut xty)?;
    let ybar = points.iter().map(|(_, y)| y).sum::<f64>() / n as f64;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (theta, y) in points {
        let row = design_row(theta);
        let fit: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
        ss_res += (y - fit) * (y - fit);
        ss_tot += (y - ybar) * (y - ybar);
    }
    if ss_tot <= 0.0 {
        return Ok(1.0);
    }
    Ok(1.0 - ss_res / ss_tot)
}

/// Gaussian elimination with partial pivoting; consumes its inputs.
fn solve_linear(a: &mut [Vec<f64>], b: &mut [f64]) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        if a[pivot][col].abs() < 1e-12 {
            return Err(Error::Domain("quadratic fit: singular design".into()));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for c in col..n {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for c in row + 1..n {
            acc -= a[row][c] * x[c];
        }
        x[row] = acc / a[row][row];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversarial::{Accelerator, GaussianLocationSimulator, InitRule, RpropConfig};
    use crate::dp::{AgeRange, GridConfig, SyntheticCalibration};
    use crate::sim::{IndividualHistory, WaveObs};
    use approx::assert_relative_eq;
    use ndarray::Array2;

    fn toy_est_cfg(seed_v: u64) -> EstimationConfig {
        EstimationConfig {
            lower: vec![-3.0],
            upper: vec![3.0],
            fd_steps: vec![0.05],
            learning_rate: 0.05,
            accelerator: Accelerator::Rprop,
            nag_momentum: 0.9,
            rprop: RpropConfig::default(),
            grad_tol: 0.015,
            max_iters: 22,
            restarts: 1,
            seed: seed_v,
            init: InitRule::BoxCenterNormal { sd_frac: 0.15 },
        }
    }

    fn toy_train(seed_v: u64) -> TrainConfig {
        TrainConfig { epochs: 100, seed: seed_v, ..TrainConfig::default() }
    }

    #[test]
    fn quantiles_and_summaries() {
        let sorted = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_relative_eq!(quantile(&sorted, 0.5), 3.0);
        assert_relative_eq!(quantile(&sorted, 0.0), 1.0);
        assert_relative_eq!(quantile(&sorted, 1.0), 5.0);
        let reps = vec![vec![1.0, 10.0], vec![3.0, 30.0], vec![2.0, 20.0]];
        let s = summarize_replicates(&reps).unwrap();
        assert_relative_eq!(s[0].mean, 2.0);
        assert_relative_eq!(s[1].mean, 20.0);
        assert_relative_eq!(s[0].variance.unwrap(), 1.0);
        let one = summarize_replicates(&reps[..1]).unwrap();
        assert!(one[0].variance.is_none());
    }

    #[test]
    fn bootstrap_degenerate_data_has_zero_variance() {
        // Identical rows and zero shocks: every resample is the same dataset
        // and the shared initialization makes every replicate identical.
        let real = Array2::from_elem((40, 1), 1.5);
        let simulator = GaussianLocationSimulator { eps: vec![0.0; 40] };
        let arch = NetworkArch::discriminator(1, &[]).unwrap();
        let res = bootstrap(&real, &simulator, &arch, &toy_train(3), &toy_est_cfg(4), 4, 99)
            .unwrap();
        assert_eq!(res.excluded, 0);
        for r in &res.replicates[1..] {
            assert_eq!(r, &res.replicates[0]);
        }
        assert_relative_eq!(res.summary[0].variance.unwrap(), 0.0);
    }

    #[test]
    fn bootstrap_is_deterministic_and_counts_exclusions() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let real = Array2::from_shape_fn((60, 1), |_| {
            0.4 + rng.sample::<f64, _>(rand_distr::StandardNormal)
        });
        let simulator = GaussianLocationSimulator::new(60, 8).unwrap();
        let arch = NetworkArch::discriminator(1, &[]).unwrap();
        let a = bootstrap(&real, &simulator, &arch, &toy_train(5), &toy_est_cfg(6), 3, 11)
            .unwrap();
        let b = bootstrap(&real, &simulator, &arch, &toy_train(5), &toy_est_cfg(6), 3, 11)
            .unwrap();
        assert_eq!(a, b);
        assert!(bootstrap(&real, &simulator, &arch, &toy_train(5), &toy_est_cfg(6), 1, 11)
            .is_err());
        // Impossible tolerance: every replicate fails to converge and the
        // summary is refused.
        let mut hard = toy_est_cfg(6);
        hard.grad_tol = 1e-12;
        hard.max_iters = 2;
        let err = bootstrap(&real, &simulator, &arch, &toy_train(5), &hard, 3, 11);
        assert!(err.is_err());
    }

    #[test]
    fn quintile_partition_is_balanced() {
        let pis: Vec<f64> = (0..23).map(|i| ((i * 7) % 23) as f64 / 23.0).collect();
        let q = pi_quintiles(&pis);
        let mut counts = [0usize; 5];
        for &v in &q {
            counts[v] += 1;
        }
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1, "unbalanced quintiles {counts:?}");
        assert_eq!(counts.iter().sum::<usize>(), 23);
        // Ties split deterministically.
        let tied = vec![0.5; 10];
        let q = pi_quintiles(&tied);
        let mut counts = [0usize; 5];
        for &v in &q {
            counts[v] += 1;
        }
        assert_eq!(counts, [2, 2, 2, 2, 2]);
    }

    fn lifecycle_fixture(seed_v: u64) -> LifecycleSimulator {
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
        let shocks = draw_shocks(400, ages, seed_v).unwrap();
        let initials = draw_synthetic_initials(&SyntheticInitials::default(), 400, seed_v);
        LifecycleSimulator {
            beta: 0.971,
            r: 0.02,
            fiscal: FiscalParams::default(),
            procs,
            grid,
            shocks,
            initials,
            spec: InputSpec::X1,
        }
    }

    #[test]
    fn counterfactual_none_is_exactly_zero() {
        let sim = lifecycle_fixture(31);
        let table = counterfactual(&sim, &[3.8, 0.25, 10_000.0], CounterfactualMode::None).unwrap();
        for row in &table.rows {
            assert_eq!(row.pct_difference, 0.0);
            assert_eq!(row.baseline, row.counterfactual);
        }
        assert!(table.decedents > 0);
    }

    #[test]
    fn no_bequest_weakly_lowers_before_death_assets() {
        let sim = lifecycle_fixture(32);
        let table =
            counterfactual(&sim, &[3.8, 0.25, 10_000.0], CounterfactualMode::NoBequest).unwrap();
        let base: f64 = table.rows.iter().map(|r| r.baseline).sum();
        let cf: f64 = table.rows.iter().map(|r| r.counterfactual).sum();
        assert!(cf <= base + 1e-9, "no-bequest assets {cf} vs baseline {base}");
        // Medical-risk shutdown runs and keeps the quintile layout.
        let t2 =
            counterfactual(&sim, &[3.8, 0.25, 10_000.0], CounterfactualMode::NoMedicalRisk)
                .unwrap();
        assert_eq!(t2.rows.len(), 5);
    }

    fn hand_panel() -> Panel {
        let wave = |assets: f64, alive: bool| WaveObs {
            assets,
            income: 0.0,
            medical: 0.0,
            healthy: alive,
            alive,
        };
        let ind = |id: u32, pi: f64, age: u32, assets: [f64; 6]| IndividualHistory {
            id,
            gender: Gender::Female,
            pi,
            age_1996: age,
            waves: assets.iter().map(|&a| wave(a, a > 0.0)).collect(),
        };
        Panel {
            individuals: vec![
                ind(0, 0.2, 80, [10.0, 8.0, 6.0, 4.0, 2.0, 1.0]),
                ind(1, 0.8, 80, [20.0, 16.0, 12.0, 8.0, 4.0, 2.0]),
            ],
            simulated: false,
        }
    }

    #[test]
    fn fit_profiles_self_comparison_and_hand_means() {
        let panel = hand_panel();
        let rows = fit_profiles(&panel, &panel, false, None).unwrap();
        // Real and simulated columns identical when compared with itself.
        for row in &rows {
            assert_eq!(row.mean_real, row.mean_sim);
            assert_eq!(row.median_real, row.median_sim);
            assert_eq!(row.n_real, row.n_sim);
        }
        // Age 80 lands in cohort 2; the two individuals take ranks 0 and 1,
        // landing in quintiles 1 and 3, one member each.
        assert_eq!(cohort_of(80), 2);
        let first = rows
            .iter()
            .find(|r| r.cohort == 2 && r.pi_quintile == 1 && r.wave_year == 1996)
            .unwrap();
        assert_relative_eq!(first.mean_real.unwrap(), 10.0);
        let third = rows
            .iter()
            .find(|r| r.cohort == 2 && r.pi_quintile == 3 && r.wave_year == 1996)
            .unwrap();
        assert_relative_eq!(third.mean_real.unwrap(), 20.0);
        // Empty groups carry explicit missing markers.
        let empty = rows.iter().find(|r| r.cohort == 1).unwrap();
        assert!(empty.mean_real.is_none());
        assert_eq!(empty.n_real, 0);
    }

    #[test]
    fn cohort_banding() {
        assert_eq!(cohort_of(72), 1);
        assert_eq!(cohort_of(76), 1);
        assert_eq!(cohort_of(77), 2);
        assert_eq!(cohort_of(80), 2);
        assert_eq!(cohort_of(86), 3);
        assert_eq!(cohort_of(91), 4);
        assert_eq!(cohort_of(92), 5);
        assert_eq!(cohort_of(99), 5);
    }

    #[test]
    fn probe_sweeps_bottlenecks() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut data = Array2::zeros((300, 8));
        for i in 0..300 {
            let a = f64::from(rng.random::<bool>());
            let b = f64::from(rng.random::<bool>());
            for j in 0..8 {
                data[(i, j)] = if j % 2 == 0 { a } else { b };
            }
        }
        let cfg = TrainConfig { epochs: 500, seed: 42, restarts: 2, ..TrainConfig::default() };
        let points = dimension_probe(&data, 2, 3, &cfg).unwrap();
        assert_eq!(points.len(), 2);
        for p in &points {
            assert!(p.correlations.iter().all(|c| *c >= 0.99), "{:?}", p.correlations);
        }
        assert!(points[1].mse <= points[0].mse + 1e-3);
        assert!(dimension_probe(&data, 0, 3, &cfg).is_err());
        assert!(dimension_probe(&data, 2, 9, &cfg).is_err());
    }

    #[test]
    fn quadratic_fit_recovers_exact_quadratics() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let mut points = Vec::new();
        for _ in 0..80 {
            let t: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = 0.5 + 2.0 * t[0] - t[1] + 3.0 * t[0] * t[0] + t[1] * t[2];
            points.push((t, y));
        }
        let r2 = quadratic_fit_r2(&points).unwrap();
        assert!(r2 > 0.999, "exact quadratic should fit, r2 = {r2}");
        // Pure noise cannot fit well.
        let noise: Vec<(Vec<f64>, f64)> = (0..80)
            .map(|_| {
                let t: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                (t, rng.random_range(-1.0..1.0))
            })
            .collect();
        let r2n = quadratic_fit_r2(&noise).unwrap();
        assert!(r2n < 0.5, "noise fit unexpectedly high, r2 = {r2n}");
    }

    #[test]
    fn monte_carlo_smoke_runs_and_is_deterministic() {
        let ages = AgeRange { min: 70, max: 100 };
        let procs = SyntheticCalibration::default().generate(ages, 3, 2e6).unwrap();
        let gcfg = GridConfig {
            n_cash: 30,
            cash_ceiling: 1_000_000.0,
            n_zeta: 2,
            n_gauss_hermite: 2,
            n_pi: 3,
            ..GridConfig::default()
        };
        let grid = StateGrid::build(&gcfg, &procs).unwrap();
        let design = MonteCarloDesign {
            truth: [3.8, 0.25, 10_000.0],
            replications: 2,
            n_real: 150,
            n_sim: 150,
            beta: 0.971,
            rate: 0.02,
            fiscal: FiscalParams::default(),
            procs,
            grid,
            initials: SyntheticInitials::default(),
            cells: vec![(InputSpec::X1, NetworkArch::discriminator(14, &[5]).unwrap())],
            train: TrainConfig { epochs: 60, ..TrainConfig::default() },
            estimation: EstimationConfig {
                lower: vec![2.0, 0.05, 2_000.0],
                upper: vec![6.0, 0.6, 25_000.0],
                fd_steps: vec![0.05, 0.005, 250.0],
                learning_rate: 0.05,
                accelerator: Accelerator::Rprop,
                nag_momentum: 0.9,
                rprop: RpropConfig::default(),
                grad_tol: 0.05,
                max_iters: 6,
                restarts: 1,
                seed: 0,
                init: InitRule::Normal {
                    mean: vec![3.8, 0.25, 10_000.0],
                    sd: vec![1.0, 0.158, 2_000.0],
                },
            },
            seed: 2121,
        };
        let a = monte_carlo(&design).unwrap();
        assert_eq!(a.cells.len(), 1);
        assert_eq!(a.cells[0].replicates.len() + a.cells[0].excluded, 2);
        // Summary recomputation from stored replicates is bit-exact.
        if a.cells[0].replicates.len() >= 2 {
            let again = summarize_replicates(&a.cells[0].replicates).unwrap();
            assert_eq!(again, a.cells[0].summary);
        }
        let b = monte_carlo(&design).unwrap();
        assert_eq!(a, b);
    }
}
