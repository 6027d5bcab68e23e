use advest::adversarial::{objective, EstimationContext, LifecycleSimulator};
use advest::dp::{solve_policy, AgeRange, GridConfig, StateGrid, SyntheticCalibration};
use advest::nn::{NetworkArch, TrainConfig};
use advest::params::{FiscalParams, PreferenceParams};
use advest::sim::{
    build_features, draw_shocks, draw_synthetic_initials, initials_from_panel, simulate_panel,
    InputSpec, SyntheticInitials,
};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(2000);
    let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1000);

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
    let fiscal = FiscalParams::default();
    let truth = PreferenceParams::new(3.8, 0.25, 10_000.0, 0.971, 0.02).unwrap();
    let policy0 = solve_policy(&truth, &fiscal, &procs, &grid).unwrap();
    let real_shocks = draw_shocks(n, ages, 1111).unwrap();
    let real_inits = draw_synthetic_initials(&SyntheticInitials::default(), n, 2222);
    let real_panel = simulate_panel(&policy0, &procs, &real_shocks, &real_inits).unwrap();
    let real = build_features(&real_panel, InputSpec::X1).unwrap();
    let est_shocks = draw_shocks(n, ages, 3333).unwrap();
    let est_inits = initials_from_panel(&real_panel, n, 4444).unwrap();
    let sim = LifecycleSimulator {
        beta: 0.971,
        r: 0.02,
        fiscal,
        procs,
        grid,
        shocks: est_shocks,
        initials: est_inits,
        spec: InputSpec::X1,
    };
    let arch = NetworkArch::discriminator(14, &[5]).unwrap();
    let train = TrainConfig { epochs, seed: 55, ..TrainConfig::default() };
    let ctx = EstimationContext::new(real.data, sim, arch, train, 66).unwrap();

    let probes: Vec<(&str, [f64; 3])> = vec![
        ("truth       ", [3.8, 0.25, 10_000.0]),
        ("nu+1        ", [4.8, 0.25, 10_000.0]),
        ("nu-1        ", [2.8, 0.25, 10_000.0]),
        ("nu-1.6      ", [2.2, 0.25, 10_000.0]),
        ("mpc+0.10    ", [3.8, 0.35, 10_000.0]),
        ("mpc-0.10    ", [3.8, 0.15, 10_000.0]),
        ("k=16.5k     ", [3.8, 0.25, 16_500.0]),
        ("k=4k        ", [3.8, 0.25, 4_000.0]),
        ("rep1 point  ", [2.227, 0.146, 16_497.0]),
    ];
    for (label, theta) in probes {
        let t0 = std::time::Instant::now();
        let loss = objective(&ctx, &theta).unwrap();
        println!("{label} loss={loss:.5}  ({:.1}s)", t0.elapsed().as_secs_f64());
    }
}
