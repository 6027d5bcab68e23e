use std::time::Instant;

use advest::adversarial::{Accelerator, EstimationConfig, InitRule, RpropConfig};
use advest::dp::{AgeRange, GridConfig, StateGrid, SyntheticCalibration};
use advest::inference::{monte_carlo, MonteCarloDesign};
use advest::nn::{NetworkArch, TrainConfig};
use advest::params::FiscalParams;
use advest::sim::{InputSpec, SyntheticInitials};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let reps: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(4);
    let n: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(2000);
    let epochs: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(300);
    let max_iters: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(30);
    let seed: u64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(20240001);

    let ages = AgeRange { min: 70, max: 100 };
    let procs = SyntheticCalibration::default().generate(ages, 5, 2e6).unwrap();
    let gcfg = GridConfig {
        n_cash: 80,
        cash_ceiling: 1_500_000.0,
        cash_scale: 8_000.0,
        n_zeta: 3,
        n_gauss_hermite: 3,
        n_pi: 5,
        age_min: 70,
        age_max: 100,
        medical_cap: 2e6,
    };
    let grid = StateGrid::build(&gcfg, &procs).unwrap();
    let design = MonteCarloDesign {
        truth: [3.8, 0.25, 10_000.0],
        replications: reps,
        n_real: n,
        n_sim: n,
        beta: 0.971,
        rate: 0.02,
        fiscal: FiscalParams::default(),
        procs,
        grid,
        initials: SyntheticInitials::default(),
        cells: vec![(InputSpec::X1, NetworkArch::discriminator(14, &[5]).unwrap())],
        train: TrainConfig { epochs, ..TrainConfig::default() },
        estimation: EstimationConfig {
            lower: vec![1.5, 0.05, 1_000.0],
            upper: vec![8.0, 0.60, 30_000.0],
            fd_steps: vec![0.05, 0.005, 250.0],
            learning_rate: 0.05,
            accelerator: Accelerator::Rprop,
            nag_momentum: 0.9,
            rprop: RpropConfig::default(),
            grad_tol: 0.02,
            max_iters,
            restarts: 1,
            seed: 0,
            init: InitRule::Normal {
                mean: vec![3.8, 0.25, 10_000.0],
                sd: vec![1.0, 0.158, 2_000.0],
            },
        },
        seed,
    };
    let t0 = Instant::now();
    let res = monte_carlo(&design).unwrap();
    let cell = &res.cells[0];
    println!("elapsed: {:.1}s for {} reps", t0.elapsed().as_secs_f64(), reps);
    println!("converged: {}, excluded: {}", cell.replicates.len(), cell.excluded);
    let band = [(3.356, 4.194), (0.192, 0.307), (6_250.0, 14_970.0)];
    let mut inside = 0;
    for (i, r) in cell.replicates.iter().enumerate() {
        let ok = (0..3).all(|j| r[j] >= band[j].0 && r[j] <= band[j].1);
        inside += ok as usize;
        let trace = &cell.winner_traces[i];
        println!(
            "rep {i}: nu={:.3} mpc={:.3} k={:.0} loss={:.4} iters={} in_band={}",
            r[0], r[1], r[2], trace.final_loss, trace.iterations.len(), ok
        );
    }
    println!("inside band: {inside}/{}", cell.replicates.len());
    for (j, name) in ["nu", "mpc", "k"].iter().enumerate() {
        let vals: Vec<f64> = cell.replicates.iter().map(|r| r[j]).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
            / (vals.len() as f64 - 1.0).max(1.0))
        .sqrt();
        println!("{name}: mean={mean:.4} sd={sd:.4} mc_se={:.4}", sd / (vals.len() as f64).sqrt());
    }
}
