//! Batch front door: configuration loading, subcommand dispatch, result
//! persistence, and plot emission.
//!
//! Every run writes its fully resolved configuration next to the outputs,
//! and all outputs are byte-identical functions of (config, seed).

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::adversarial::{estimate, EstimationContext, LifecycleSimulator, RestartTrace};
use crate::config::{InitialsSection, RunConfig};
use crate::dp::{
    parameter_hash, solve_policy, ExogenousProcesses, PolicySolution, StateGrid,
};
use crate::error::{Error, Result};
use crate::inference::{
    bootstrap, counterfactual, dimension_probe, fit_profiles, monte_carlo, quadratic_fit_r2,
    BootstrapResult, MonteCarloDesign, MonteCarloResult, ProbePoint,
};
use crate::nn::NetworkArch;
use crate::params::{FiscalParams, PreferenceParams};
use crate::plot::{iteration_color, multi_panel_svg, Panel as PlotPanel, Series};
use crate::sim::{
    build_features, draw_shocks, draw_synthetic_initials, initials_from_panel, read_panel_csv,
    simulate_panel, write_features_csv, write_panel_csv, InputSpec, Panel,
};

const STAGE_SHOCKS: u64 = 11;
const STAGE_INITIALS: u64 = 12;
const STAGE_REAL_SHOCKS: u64 = 13;
const STAGE_REAL_INITIALS: u64 = 14;
const STAGE_TRAIN: u64 = 15;
const STAGE_ESTIMATE: u64 = 16;
const STAGE_AUGMENT: u64 = 17;
const STAGE_BOOTSTRAP: u64 = 18;
const STAGE_PROBE: u64 = 19;

#[derive(Debug, Parser)]
#[command(name = "advest", version, about = "Life-cycle savings model: solve, simulate, estimate")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker thread cap (env ADVEST_THREADS as fallback).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory override.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the dynamic program and persist the policy cache.
    Solve,
    /// Simulate a panel from the solved policy.
    Simulate,
    /// Run the adversarial estimator.
    Estimate,
    /// Bootstrap the estimator.
    Bootstrap,
    /// Monte Carlo validation across synthetic economies.
    Montecarlo,
    /// Decompose saving motives against a counterfactual.
    Counterfactual,
    /// Autoencoder dimensionality probe of the binary features.
    Probe,
    /// Emit an SVG chart (plus the underlying CSV) from a result file.
    Plot {
        /// Result file produced by another subcommand.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        kind: PlotKind,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlotKind {
    LossTrace,
    ParamTrace,
    FitProfiles,
    AutoencoderCurve,
}

/// Overall run status for the exit code: 0 clean, 3 flagged non-convergence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Clean,
    NonConverged,
}

struct ModelEnv {
    params: PreferenceParams,
    fiscal: FiscalParams,
    procs: ExogenousProcesses,
    grid: StateGrid,
}

fn build_env(cfg: &RunConfig) -> Result<ModelEnv> {
    let params = cfg.params.preference_params()?;
    let fiscal = cfg.params.fiscal.clone();
    let procs = cfg.build_processes()?;
    let grid = StateGrid::build(&cfg.grid, &procs)?;
    Ok(ModelEnv { params, fiscal, procs, grid })
}

fn init_threads(cap: Option<usize>) {
    let n = cap.or_else(|| {
        std::env::var("ADVEST_THREADS").ok().and_then(|v| v.parse::<usize>().ok())
    });
    if let Some(n) = n {
        // Ignore the error when a pool already exists (tests, repeat calls).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

pub fn run(cli: Cli) -> Result<Outcome> {
    init_threads(cli.threads);
    if let Command::Plot { input, kind } = &cli.command {
        let out_dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
        std::fs::create_dir_all(&out_dir)?;
        cmd_plot(input, *kind, &out_dir)?;
        return Ok(Outcome::Clean);
    }
    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required for this subcommand".into()))?;
    let mut cfg = RunConfig::load(config_path)?;
    if let Some(s) = cli.seed {
        cfg.simulation.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.io.out_dir = o;
    }
    std::fs::create_dir_all(&cfg.io.out_dir)?;
    std::fs::write(cfg.io.out_dir.join("resolved_config.json"), cfg.to_pretty_json()?)?;
    match cli.command {
        Command::Solve => cmd_solve(&cfg),
        Command::Simulate => cmd_simulate(&cfg),
        Command::Estimate => cmd_estimate(&cfg),
        Command::Bootstrap => cmd_bootstrap(&cfg),
        Command::Montecarlo => cmd_montecarlo(&cfg),
        Command::Counterfactual => cmd_counterfactual(&cfg),
        Command::Probe => cmd_probe(&cfg),
        Command::Plot { .. } => unreachable!("handled above"),
    }
}

// ---------------------------------------------------------------------------
// Policy cache

const CACHE_MAGIC: &[u8; 8] = b"ADVPOLC1";

/// Writes the flat binary policy cache keyed by the parameter hash.
pub fn write_policy_cache(path: &Path, policy: &PolicySolution) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(CACHE_MAGIC)?;
    let hash = policy.param_hash.as_bytes();
    f.write_all(&(hash.len() as u32).to_le_bytes())?;
    f.write_all(hash)?;
    f.write_all(&(policy.consumption.len() as u64).to_le_bytes())?;
    for &v in &policy.consumption {
        f.write_all(&v.to_le_bytes())?;
    }
    for &v in &policy.value {
        f.write_all(&v.to_le_bytes())?;
    }
    f.flush()?;
    Ok(())
}

/// Reads the cache's hash without loading the arrays.
pub fn cached_policy_hash(path: &Path) -> Result<Option<String>> {
    let mut f = match std::fs::File::open(path) {
        Ok(f) => std::io::BufReader::new(f),
        Err(_) => return Ok(None),
    };
    let mut magic = [0u8; 8];
    if f.read_exact(&mut magic).is_err() || &magic != CACHE_MAGIC {
        return Ok(None);
    }
    let mut len = [0u8; 4];
    f.read_exact(&mut len)?;
    let mut hash = vec![0u8; u32::from_le_bytes(len) as usize];
    f.read_exact(&mut hash)?;
    Ok(Some(String::from_utf8_lossy(&hash).into_owned()))
}

/// Loads the cached arrays when the stored hash matches.
pub fn read_policy_cache(
    path: &Path,
    expected_hash: &str,
) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
    if cached_policy_hash(path)?.as_deref() != Some(expected_hash) {
        return Ok(None);
    }
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut skip = vec![0u8; 8 + 4 + expected_hash.len()];
    f.read_exact(&mut skip)?;
    let mut len8 = [0u8; 8];
    f.read_exact(&mut len8)?;
    let n = u64::from_le_bytes(len8) as usize;
    let mut read_array = |n: usize| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            f.read_exact(&mut buf)?;
            out.push(f64::from_le_bytes(buf));
        }
        Ok(out)
    };
    let consumption = read_array(n)?;
    let value = read_array(n)?;
    Ok(Some((consumption, value)))
}

fn load_or_solve(cfg: &RunConfig, env: &ModelEnv) -> Result<(PolicySolution, bool)> {
    let hash = parameter_hash(&env.params, &env.fiscal, &env.procs, &env.grid);
    let cache = cfg.io.out_dir.join("policy.bin");
    if let Some((consumption, value)) = read_policy_cache(&cache, &hash)? {
        let policy = PolicySolution {
            params: env.params.clone(),
            fiscal: env.fiscal.clone(),
            grid: env.grid.clone(),
            consumption,
            value,
            param_hash: hash,
        };
        return Ok((policy, true));
    }
    let policy = solve_policy(&env.params, &env.fiscal, &env.procs, &env.grid)?;
    write_policy_cache(&cache, &policy)?;
    Ok((policy, false))
}

fn cmd_solve(cfg: &RunConfig) -> Result<Outcome> {
    let env = build_env(cfg)?;
    let (policy, cached) = load_or_solve(cfg, &env)?;
    if cached {
        println!("policy cache hit ({}): solve skipped", &policy.param_hash[..12]);
    } else {
        println!("policy solved and cached ({})", &policy.param_hash[..12]);
    }
    println!(
        "grid: {} cash nodes to {:.0}, {} zeta nodes, {} PI nodes, ages {}-{}, {} states/age",
        env.grid.n_cash(),
        env.grid.cash.ceiling(),
        env.grid.n_zeta(),
        env.grid.n_pi(),
        env.grid.ages.min,
        env.grid.ages.max,
        env.grid.states_per_age()
    );
    Ok(Outcome::Clean)
}

// ---------------------------------------------------------------------------
// Simulation ingredients shared by several commands

fn load_real_panel(cfg: &RunConfig) -> Result<Option<Panel>> {
    match &cfg.io.real_panel {
        Some(path) => {
            let file = std::fs::File::open(path)
                .map_err(|e| Error::Config(format!("io.real_panel {}: {e}", path.display())))?;
            Ok(Some(read_panel_csv(file, false)?))
        }
        None => Ok(None),
    }
}

fn draw_initials_per_config(
    cfg: &RunConfig,
    real: Option<&Panel>,
    m: usize,
    seed_value: u64,
) -> Result<Vec<crate::sim::InitialState>> {
    match (&cfg.simulation.initials, real) {
        (InitialsSection::Synthetic(spec), None) => Ok(draw_synthetic_initials(spec, m, seed_value)),
        // With real data on hand, condition on its 1996 cross-section.
        (_, Some(panel)) => initials_from_panel(panel, m, seed_value),
        (InitialsSection::FromRealPanel, None) => {
            Err(Error::Config("simulation.initials: from_real_panel requires io.real_panel".into()))
        }
    }
}

/// Synthetic "real" economy for pure Monte Carlo runs, generated at the
/// configured parameters with its own seed streams.
fn synthesize_real_panel(cfg: &RunConfig, env: &ModelEnv, policy: &PolicySolution) -> Result<Panel> {
    let n = cfg.inference.mc_n;
    let shocks = draw_shocks(n, env.procs.ages, cfg.stage_seed(STAGE_REAL_SHOCKS))?;
    let inits = match &cfg.simulation.initials {
        InitialsSection::Synthetic(spec) => {
            draw_synthetic_initials(spec, n, cfg.stage_seed(STAGE_REAL_INITIALS))
        }
        InitialsSection::FromRealPanel => {
            return Err(Error::Config(
                "simulation.initials: from_real_panel requires io.real_panel".into(),
            ))
        }
    };
    simulate_panel(policy, &env.procs, &shocks, &inits)
}

fn build_simulator(
    cfg: &RunConfig,
    env: &ModelEnv,
    real: Option<&Panel>,
    spec: InputSpec,
) -> Result<LifecycleSimulator> {
    let m = cfg.simulation.m;
    let shocks = draw_shocks(m, env.procs.ages, cfg.stage_seed(STAGE_SHOCKS))?;
    let initials = draw_initials_per_config(cfg, real, m, cfg.stage_seed(STAGE_INITIALS))?;
    Ok(LifecycleSimulator {
        beta: env.params.beta,
        r: env.params.r,
        fiscal: env.fiscal.clone(),
        procs: env.procs.clone(),
        grid: env.grid.clone(),
        shocks,
        initials,
        spec,
    })
}

fn discriminator_arch(cfg: &RunConfig, spec: InputSpec) -> Result<NetworkArch> {
    NetworkArch::discriminator(spec.n_cols(), &cfg.discriminator.hidden)
}

fn cmd_simulate(cfg: &RunConfig) -> Result<Outcome> {
    let env = build_env(cfg)?;
    let (policy, _) = load_or_solve(cfg, &env)?;
    let real = load_real_panel(cfg)?;
    let m = cfg.simulation.m;
    let shocks = draw_shocks(m, env.procs.ages, cfg.stage_seed(STAGE_SHOCKS))?;
    let initials = draw_initials_per_config(cfg, real.as_ref(), m, cfg.stage_seed(STAGE_INITIALS))?;
    let panel = simulate_panel(&policy, &env.procs, &shocks, &initials)?;
    let out = &cfg.io.out_dir;
    write_panel_csv(&panel, std::fs::File::create(out.join("panel.csv"))?)?;
    let features = build_features(&panel, cfg.estimation.input_spec)?;
    write_features_csv(&features, std::fs::File::create(out.join("features.csv"))?)?;
    if let Some(real_panel) = &real {
        let rows = fit_profiles(
            real_panel,
            &panel,
            cfg.inference.fit_by_gender,
            cfg.inference.fit_trim_quantile,
        )?;
        write_fit_csv(&rows, &out.join("fit_profiles.csv"))?;
        println!("panel.csv, features.csv and fit_profiles.csv written to {}", out.display());
    } else {
        println!("panel.csv and features.csv written to {}", out.display());
    }
    Ok(Outcome::Clean)
}

/// Real features plus the frozen simulator; the shared estimation setup.
fn build_estimation_inputs(
    cfg: &RunConfig,
    env: &ModelEnv,
) -> Result<(ndarray::Array2<f64>, LifecycleSimulator)> {
    let spec = cfg.estimation.input_spec;
    let real_panel = match load_real_panel(cfg)? {
        Some(p) => p,
        None => {
            // Monte Carlo mode: the "real" data is the model itself at the
            // configured parameters.
            let (policy, _) = load_or_solve(cfg, env)?;
            synthesize_real_panel(cfg, env, &policy)?
        }
    };
    let real_features = build_features(&real_panel, spec)?;
    let simulator = build_simulator(cfg, env, Some(&real_panel), spec)?;
    Ok((real_features.data, simulator))
}

fn write_trace_csv(trace: &RestartTrace, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(std::fs::File::create(path)?);
    w.write_record(["iteration", "nu", "mpc", "k_curv", "loss", "grad_nu", "grad_mpc", "grad_k"])?;
    for (i, rec) in trace.iterations.iter().enumerate() {
        w.write_record(&[
            i.to_string(),
            rec.theta[0].to_string(),
            rec.theta[1].to_string(),
            rec.theta[2].to_string(),
            rec.loss.to_string(),
            rec.gradient[0].to_string(),
            rec.gradient[1].to_string(),
            rec.gradient[2].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_estimate(cfg: &RunConfig) -> Result<Outcome> {
    let env = build_env(cfg)?;
    let (real, simulator) = build_estimation_inputs(cfg, &env)?;
    let arch = discriminator_arch(cfg, cfg.estimation.input_spec)?;
    let mut train = cfg.discriminator.train.clone();
    train.seed = cfg.stage_seed(STAGE_TRAIN);
    let est_cfg = cfg.estimation.to_config(cfg.stage_seed(STAGE_ESTIMATE));
    let ctx =
        EstimationContext::new(real, simulator, arch, train, cfg.stage_seed(STAGE_AUGMENT))?;
    let mut res = estimate(&ctx, &est_cfg)?;
    res.attach_derived(env.params.beta, env.params.r)?;
    let out = &cfg.io.out_dir;
    std::fs::write(out.join("estimate.json"), serde_json::to_string_pretty(&res)?)?;
    write_trace_csv(&res.traces[res.winner_restart], &out.join("trace.csv"))?;
    println!(
        "estimate: nu={:.4} mpc={:.4} k={:.1} loss={:.4} converged={} ({} restarts, {:.1}s)",
        res.theta_hat[0],
        res.theta_hat[1],
        res.theta_hat[2],
        res.final_loss,
        res.converged,
        res.traces.len(),
        res.wall_time_secs
    );
    Ok(if res.converged { Outcome::Clean } else { Outcome::NonConverged })
}

fn write_bootstrap_csv(res: &BootstrapResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(std::fs::File::create(path)?);
    w.write_record(["param", "mean", "variance", "q2_5", "q5", "q95", "q97_5"])?;
    let names = ["nu", "mpc", "k_curv"];
    for (j, s) in res.summary.iter().enumerate() {
        w.write_record(&[
            names.get(j).unwrap_or(&"theta").to_string(),
            s.mean.to_string(),
            s.variance.map_or("NA".into(), |v| v.to_string()),
            s.q2_5.to_string(),
            s.q5.to_string(),
            s.q95.to_string(),
            s.q97_5.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_bootstrap(cfg: &RunConfig) -> Result<Outcome> {
    let env = build_env(cfg)?;
    let (real, simulator) = build_estimation_inputs(cfg, &env)?;
    let arch = discriminator_arch(cfg, cfg.estimation.input_spec)?;
    let mut train = cfg.discriminator.train.clone();
    train.seed = cfg.stage_seed(STAGE_TRAIN);
    let est_cfg = cfg.estimation.to_config(cfg.stage_seed(STAGE_ESTIMATE));
    let res = bootstrap(
        &real,
        &simulator,
        &arch,
        &train,
        &est_cfg,
        cfg.inference.bootstrap_replications,
        cfg.stage_seed(STAGE_BOOTSTRAP),
    )?;
    let out = &cfg.io.out_dir;
    std::fs::write(out.join("bootstrap.json"), serde_json::to_string_pretty(&res)?)?;
    write_bootstrap_csv(&res, &out.join("bootstrap_summary.csv"))?;
    write_manifest(
        cfg,
        "bootstrap",
        serde_json::json!({
            "requested": res.requested,
            "converged": res.replicates.len(),
            "excluded": res.excluded,
        }),
    )?;
    println!(
        "bootstrap: {} of {} replicates converged ({} excluded)",
        res.replicates.len(),
        res.requested,
        res.excluded
    );
    Ok(if res.excluded == 0 { Outcome::Clean } else { Outcome::NonConverged })
}

fn write_montecarlo_csv(res: &MonteCarloResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(std::fs::File::create(path)?);
    w.write_record([
        "input", "arch", "param", "truth", "mean", "variance", "q2_5", "q97_5", "range_95",
        "q5", "q95", "range_90", "converged", "excluded",
    ])?;
    let names = ["nu", "mpc", "k_curv"];
    for cell in &res.cells {
        let input = match cell.spec {
            InputSpec::X1 => "x1",
            InputSpec::X2 => "x2",
        };
        for (j, s) in cell.summary.iter().enumerate() {
            w.write_record(&[
                input.to_string(),
                cell.arch_label.clone(),
                names.get(j).unwrap_or(&"theta").to_string(),
                res.truth[j].to_string(),
                s.mean.to_string(),
                s.variance.map_or("NA".into(), |v| v.to_string()),
                s.q2_5.to_string(),
                s.q97_5.to_string(),
                (s.q97_5 - s.q2_5).to_string(),
                s.q5.to_string(),
                s.q95.to_string(),
                (s.q95 - s.q5).to_string(),
                cell.replicates.len().to_string(),
                cell.excluded.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_montecarlo(cfg: &RunConfig) -> Result<Outcome> {
    let env = build_env(cfg)?;
    let initials = match &cfg.simulation.initials {
        InitialsSection::Synthetic(spec) => spec.clone(),
        InitialsSection::FromRealPanel => {
            return Err(Error::Config(
                "montecarlo: simulation.initials must be synthetic".into(),
            ))
        }
    };
    let arch = discriminator_arch(cfg, cfg.estimation.input_spec)?;
    let design = MonteCarloDesign {
        truth: [cfg.params.nu, cfg.params.mpc, cfg.params.k_curv],
        replications: cfg.inference.mc_replications,
        n_real: cfg.inference.mc_n,
        n_sim: cfg.simulation.m,
        beta: cfg.params.beta,
        rate: cfg.params.r,
        fiscal: env.fiscal.clone(),
        procs: env.procs.clone(),
        grid: env.grid.clone(),
        initials,
        cells: vec![(cfg.estimation.input_spec, arch)],
        train: cfg.discriminator.train.clone(),
        estimation: cfg.estimation.to_config(0),
        seed: cfg.simulation.seed,
    };
    let res = monte_carlo(&design)?;
    let out = &cfg.io.out_dir;
    std::fs::write(out.join("montecarlo.json"), serde_json::to_string_pretty(&res)?)?;
    write_montecarlo_csv(&res, &out.join("montecarlo.csv"))?;
    // Loss-shape diagnostic over the pooled near-optimum trace points.
    let mut points: Vec<(Vec<f64>, f64)> = Vec::new();
    for cell in &res.cells {
        for trace in &cell.winner_traces {
            for rec in &trace.iterations {
                points.push((rec.theta.clone(), rec.loss));
            }
        }
    }
    let r2 = if points.len() > 20 {
        let mut losses: Vec<f64> = points.iter().map(|p| p.1).collect();
        losses.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let cutoff = losses[losses.len() / 2];
        let near: Vec<(Vec<f64>, f64)> =
            points.into_iter().filter(|p| p.1 <= cutoff).collect();
        quadratic_fit_r2(&near).ok()
    } else {
        None
    };
    let excluded: usize = res.cells.iter().map(|c| c.excluded).sum();
    write_manifest(
        cfg,
        "montecarlo",
        serde_json::json!({
            "replications": res.replications,
            "excluded": excluded,
            "loss_shape_r2": r2,
        }),
    )?;
    for cell in &res.cells {
        println!(
            "montecarlo cell {} / {}: {} converged, {} excluded",
            cell.arch_label,
            match cell.spec {
                InputSpec::X1 => "x1",
                InputSpec::X2 => "x2",
            },
            cell.replicates.len(),
            cell.excluded
        );
    }
    if let Some(r2) = r2 {
        println!("near-optimum quadratic fit: R^2 = {r2:.3}");
    }
    Ok(if excluded == 0 { Outcome::Clean } else { Outcome::NonConverged })
}

fn cmd_counterfactual(cfg: &RunConfig) -> Result<Outcome> {
    let env = build_env(cfg)?;
    let real = load_real_panel(cfg)?;
    let simulator = build_simulator(cfg, &env, real.as_ref(), cfg.estimation.input_spec)?;
    let theta = [cfg.params.nu, cfg.params.mpc, cfg.params.k_curv];
    let table = counterfactual(&simulator, &theta, cfg.inference.counterfactual_mode)?;
    let out = &cfg.io.out_dir;
    std::fs::write(out.join("counterfactual.json"), serde_json::to_string_pretty(&table)?)?;
    let mut w = csv::Writer::from_writer(std::fs::File::create(out.join("counterfactual.csv"))?);
    w.write_record(["quintile", "baseline_k", "counterfactual_k", "pct_difference"])?;
    for row in &table.rows {
        w.write_record(&[
            row.quintile.to_string(),
            row.baseline.to_string(),
            row.counterfactual.to_string(),
            row.pct_difference.to_string(),
        ])?;
    }
    w.flush()?;
    println!(
        "counterfactual ({:?}): {} decedents, tables written to {}",
        table.mode,
        table.decedents,
        out.display()
    );
    Ok(Outcome::Clean)
}

fn write_probe_csv(points: &[ProbePoint], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(std::fs::File::create(path)?);
    let ncols = points.first().map_or(0, |p| p.correlations.len());
    let mut header = vec!["bottleneck".to_string(), "mse".to_string(), "avg_correlation".to_string()];
    header.extend((0..ncols).map(|j| format!("corr_{j}")));
    w.write_record(&header)?;
    for p in points {
        let finite: Vec<f64> = p.correlations.iter().copied().filter(|c| c.is_finite()).collect();
        let avg = if finite.is_empty() {
            "NA".to_string()
        } else {
            (finite.iter().sum::<f64>() / finite.len() as f64).to_string()
        };
        let mut rec = vec![p.bottleneck.to_string(), p.mse.to_string(), avg];
        rec.extend(p.correlations.iter().map(|c| {
            if c.is_finite() {
                c.to_string()
            } else {
                "NA".to_string()
            }
        }));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_probe(cfg: &RunConfig) -> Result<Outcome> {
    let env = build_env(cfg)?;
    // The probe runs on the twelve binary X2 columns of the real panel, or
    // of a simulated stand-in when no real data is supplied.
    let panel = match load_real_panel(cfg)? {
        Some(p) => p,
        None => {
            let (policy, _) = load_or_solve(cfg, &env)?;
            synthesize_real_panel(cfg, &env, &policy)?
        }
    };
    let features = build_features(&panel, InputSpec::X2)?;
    let binary = crate::sim::binary_feature_columns(&features)?;
    let mut train = cfg.discriminator.train.clone();
    train.seed = cfg.stage_seed(STAGE_PROBE);
    let points =
        dimension_probe(&binary, cfg.inference.probe_d_min, cfg.inference.probe_d_max, &train)?;
    let out = &cfg.io.out_dir;
    std::fs::write(out.join("probe.json"), serde_json::to_string_pretty(&points)?)?;
    write_probe_csv(&points, &out.join("probe.csv"))?;
    println!("probe: {} bottleneck sizes written to {}", points.len(), out.display());
    Ok(Outcome::Clean)
}

fn write_manifest(cfg: &RunConfig, command: &str, extra: serde_json::Value) -> Result<()> {
    let manifest = serde_json::json!({
        "command": command,
        "master_seed": cfg.simulation.seed,
        "config": "resolved_config.json",
        "details": extra,
    });
    std::fs::write(
        cfg.io.out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

fn write_fit_csv(rows: &[crate::inference::FitGroupRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(std::fs::File::create(path)?);
    w.write_record([
        "cohort",
        "pi_quintile",
        "gender",
        "wave_year",
        "n_real",
        "n_sim",
        "mean_real",
        "median_real",
        "mean_sim",
        "median_sim",
    ])?;
    let opt = |v: Option<f64>| v.map_or("NA".to_string(), |x| x.to_string());
    for r in rows {
        w.write_record(&[
            r.cohort.to_string(),
            r.pi_quintile.to_string(),
            r.gender.map_or("all".to_string(), |g| g.index().to_string()),
            r.wave_year.to_string(),
            r.n_real.to_string(),
            r.n_sim.to_string(),
            opt(r.mean_real),
            opt(r.median_real),
            opt(r.mean_sim),
            opt(r.median_sim),
        ])?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Plots

fn cmd_plot(input: &Path, kind: PlotKind, out_dir: &Path) -> Result<()> {
    match kind {
        PlotKind::LossTrace => plot_loss_trace(input, out_dir),
        PlotKind::ParamTrace => plot_param_trace(input, out_dir),
        PlotKind::FitProfiles => plot_fit_profiles(input, out_dir),
        PlotKind::AutoencoderCurve => plot_autoencoder_curve(input, out_dir),
    }
}

fn load_estimate(input: &Path) -> Result<crate::adversarial::EstimateResult> {
    let text = std::fs::read_to_string(input)
        .map_err(|e| Error::Config(format!("plot input {}: {e}", input.display())))?;
    let res: crate::adversarial::EstimateResult = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("plot input is not an estimate result: {e}")))?;
    if res.traces.is_empty() || res.traces[res.winner_restart].iterations.is_empty() {
        return Err(Error::Domain("plot: estimate result carries an empty trace".into()));
    }
    Ok(res)
}

fn plot_loss_trace(input: &Path, out_dir: &Path) -> Result<()> {
    let res = load_estimate(input)?;
    let trace = &res.traces[res.winner_restart];
    let points: Vec<(f64, f64)> =
        trace.iterations.iter().enumerate().map(|(i, r)| (i as f64, r.loss)).collect();
    let panel = PlotPanel {
        title: "loss by iteration".into(),
        x_label: "iteration".into(),
        y_label: "cross-entropy loss".into(),
        series: vec![Series::line("loss", points.clone(), "#1f77b4")],
    };
    let svg = multi_panel_svg(&[panel], 560.0, 360.0)?;
    std::fs::write(out_dir.join("plot_loss_trace.svg"), svg)?;
    let mut w = csv::Writer::from_writer(std::fs::File::create(out_dir.join("plot_loss_trace.csv"))?);
    w.write_record(["iteration", "loss"])?;
    for (i, l) in &points {
        w.write_record(&[i.to_string(), l.to_string()])?;
    }
    w.flush()?;
    println!("plot_loss_trace.svg written to {}", out_dir.display());
    Ok(())
}

fn plot_param_trace(input: &Path, out_dir: &Path) -> Result<()> {
    let res = load_estimate(input)?;
    let trace = &res.traces[res.winner_restart];
    let total = trace.iterations.len();
    let colors: Vec<String> = (0..total).map(|i| iteration_color(i, total)).collect();
    let names = ["nu", "mpc", "k (k$)"];
    let panels: Vec<PlotPanel> = (0..3)
        .map(|j| {
            let scale = if j == 2 { 1e-3 } else { 1.0 };
            let points: Vec<(f64, f64)> = trace
                .iterations
                .iter()
                .map(|r| (r.theta[j] * scale, r.loss))
                .collect();
            PlotPanel {
                title: format!("{} trajectory (light to dark by iteration)", names[j]),
                x_label: names[j].to_string(),
                y_label: "loss".into(),
                series: vec![Series::scatter("", points, colors.clone())],
            }
        })
        .collect();
    let svg = multi_panel_svg(&panels, 420.0, 340.0)?;
    std::fs::write(out_dir.join("plot_param_trace.svg"), svg)?;
    let mut w =
        csv::Writer::from_writer(std::fs::File::create(out_dir.join("plot_param_trace.csv"))?);
    w.write_record(["iteration", "nu", "mpc", "k_curv", "loss"])?;
    for (i, r) in trace.iterations.iter().enumerate() {
        w.write_record(&[
            i.to_string(),
            r.theta[0].to_string(),
            r.theta[1].to_string(),
            r.theta[2].to_string(),
            r.loss.to_string(),
        ])?;
    }
    w.flush()?;
    println!("plot_param_trace.svg written to {}", out_dir.display());
    Ok(())
}

fn plot_fit_profiles(input: &Path, out_dir: &Path) -> Result<()> {
    // Parse the fit_profiles.csv emitted by the simulate command.
    let mut rdr = csv::Reader::from_path(input)
        .map_err(|e| Error::Config(format!("plot input {}: {e}", input.display())))?;
    let headers = rdr.headers()?.clone();
    let expected = ["cohort", "pi_quintile", "gender", "wave_year"];
    for (i, name) in expected.iter().enumerate() {
        if headers.get(i) != Some(*name) {
            return Err(Error::Config(format!(
                "plot input is not a fit-profiles table (column {i} is {:?})",
                headers.get(i)
            )));
        }
    }
    struct Row {
        cohort: usize,
        piq: usize,
        gender: String,
        year: f64,
        mean_real: Option<f64>,
        mean_sim: Option<f64>,
        n_real: usize,
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let parse_opt = |s: &str| -> Option<f64> { s.parse::<f64>().ok() };
        rows.push(Row {
            cohort: rec[0].parse().unwrap_or(0),
            piq: rec[1].parse().unwrap_or(0),
            gender: rec[2].to_string(),
            year: rec[3].parse().unwrap_or(0.0),
            n_real: rec[4].parse().unwrap_or(0),
            mean_real: parse_opt(&rec[6]),
            mean_sim: parse_opt(&rec[8]),
        });
    }
    if rows.is_empty() {
        return Err(Error::Domain("plot: fit-profiles table is empty".into()));
    }
    // Plot the most-populated cohort; one panel per (quintile, gender).
    let mut cohort_counts = std::collections::BTreeMap::new();
    for r in &rows {
        *cohort_counts.entry(r.cohort).or_insert(0usize) += r.n_real;
    }
    let cohort = *cohort_counts.iter().max_by_key(|(_, c)| **c).unwrap().0;
    let mut panels = Vec::new();
    let mut genders: Vec<String> = rows.iter().map(|r| r.gender.clone()).collect();
    genders.sort();
    genders.dedup();
    for piq in 1..=5usize {
        for g in &genders {
            let sel: Vec<&Row> = rows
                .iter()
                .filter(|r| r.cohort == cohort && r.piq == piq && &r.gender == g)
                .collect();
            let real: Vec<(f64, f64)> =
                sel.iter().filter_map(|r| r.mean_real.map(|v| (r.year, v / 1_000.0))).collect();
            let sim: Vec<(f64, f64)> =
                sel.iter().filter_map(|r| r.mean_sim.map(|v| (r.year, v / 1_000.0))).collect();
            if real.is_empty() && sim.is_empty() {
                continue;
            }
            let gender_label = match g.as_str() {
                "0" => "women",
                "1" => "men",
                _ => "all",
            };
            panels.push(PlotPanel {
                title: format!("cohort {cohort}, PIq {piq}, {gender_label}"),
                x_label: "wave".into(),
                y_label: "mean assets (k$)".into(),
                series: vec![
                    Series::line("real", real, "#1f77b4"),
                    Series::line("simulated", sim, "#2ca02c").dashed(),
                ],
            });
        }
    }
    if panels.is_empty() {
        return Err(Error::Domain("plot: no populated fit groups".into()));
    }
    let svg = multi_panel_svg(&panels, 380.0, 320.0)?;
    std::fs::write(out_dir.join("plot_fit_profiles.svg"), svg)?;
    std::fs::copy(input, out_dir.join("plot_fit_profiles.csv"))?;
    println!("plot_fit_profiles.svg written to {}", out_dir.display());
    Ok(())
}

fn plot_autoencoder_curve(input: &Path, out_dir: &Path) -> Result<()> {
    let text = std::fs::read_to_string(input)
        .map_err(|e| Error::Config(format!("plot input {}: {e}", input.display())))?;
    let points: Vec<ProbePoint> = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("plot input is not a probe result: {e}")))?;
    if points.is_empty() {
        return Err(Error::Domain("plot: probe result is empty".into()));
    }
    let mse: Vec<(f64, f64)> = points.iter().map(|p| (p.bottleneck as f64, p.mse)).collect();
    let mse_panel = PlotPanel {
        title: "reconstruction MSE".into(),
        x_label: "bottleneck size".into(),
        y_label: "MSE".into(),
        series: vec![Series::line("mse", mse, "#1f77b4")],
    };
    let ncols = points[0].correlations.len();
    let mut corr_series = Vec::new();
    for j in 0..ncols {
        let pts: Vec<(f64, f64)> = points
            .iter()
            .filter(|p| p.correlations[j].is_finite())
            .map(|p| (p.bottleneck as f64, p.correlations[j]))
            .collect();
        if !pts.is_empty() {
            corr_series.push(
                Series::line(String::new(), pts, "#2ca02c").dashed(),
            );
        }
    }
    if corr_series.is_empty() {
        return Err(Error::Domain("plot: probe correlations are all degenerate".into()));
    }
    let corr_panel = PlotPanel {
        title: "per-column correlation".into(),
        x_label: "bottleneck size".into(),
        y_label: "correlation".into(),
        series: corr_series,
    };
    let svg = multi_panel_svg(&[mse_panel, corr_panel], 460.0, 340.0)?;
    std::fs::write(out_dir.join("plot_autoencoder_curve.svg"), svg)?;
    write_probe_csv(&points, &out_dir.join("plot_autoencoder_curve.csv"))?;
    println!("plot_autoencoder_curve.svg written to {}", out_dir.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::{AgeRange, GridConfig, SyntheticCalibration};

    #[test]
    fn policy_cache_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let ages = AgeRange { min: 70, max: 80 };
        let procs = SyntheticCalibration::default().generate(ages, 3, 2e6).unwrap();
        let gcfg = GridConfig {
            n_cash: 20,
            n_zeta: 2,
            n_gauss_hermite: 2,
            n_pi: 3,
            age_min: 70,
            age_max: 80,
            ..GridConfig::default()
        };
        let grid = StateGrid::build(&gcfg, &procs).unwrap();
        let params = PreferenceParams::new(3.8, 0.25, 10_000.0, 0.971, 0.02).unwrap();
        let fiscal = FiscalParams::default();
        let policy = solve_policy(&params, &fiscal, &procs, &grid).unwrap();
        let path = dir.path().join("policy.bin");
        write_policy_cache(&path, &policy).unwrap();
        assert_eq!(cached_policy_hash(&path).unwrap().as_deref(), Some(policy.param_hash.as_str()));
        let (c, v) = read_policy_cache(&path, &policy.param_hash).unwrap().unwrap();
        assert_eq!(c, policy.consumption);
        assert_eq!(v, policy.value);
        // A different hash misses.
        assert!(read_policy_cache(&path, "deadbeef").unwrap().is_none());
        // Corrupt magic misses cleanly.
        std::fs::write(&path, b"garbage").unwrap();
        assert!(cached_policy_hash(&path).unwrap().is_none());
    }
}
