use advest::dp::{solve_policy, AgeRange, GridConfig, StateGrid, SyntheticCalibration};
use advest::params::{FiscalParams, PreferenceParams};
use advest::sim::{draw_shocks, draw_synthetic_initials, simulate_panel, SyntheticInitials};

/// Normalized distance between mean asset paths (and death shares) at the
/// truth and at a deviation, per PI quintile and wave, with standard errors
/// scaled to an n=2000 panel.
fn main() {
    let n = 20_000usize;
    let n_target = 2_000f64;
    let ages = AgeRange { min: 70, max: 100 };
    let cal = SyntheticCalibration::default();
    let procs = cal.generate(ages, 5, 2e6).unwrap();
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
    let shocks = draw_shocks(n, ages, 909).unwrap();
    let inits = draw_synthetic_initials(&SyntheticInitials::default(), n, 909);

    let run = |theta: [f64; 3]| {
        let p = PreferenceParams::new(theta[0], theta[1], theta[2], 0.971, 0.02).unwrap();
        let policy = solve_policy(&p, &fiscal, &procs, &grid).unwrap();
        simulate_panel(&policy, &procs, &shocks, &inits).unwrap()
    };
    let truth = run([3.8, 0.25, 10_000.0]);

    // Quintile membership by PI rank.
    let pis: Vec<f64> = truth.individuals.iter().map(|i| i.pi).collect();
    let quintiles = advest::inference::pi_quintiles(&pis);

    let stats = |panel: &advest::sim::Panel| -> (Vec<Vec<(f64, f64, usize)>>, Vec<f64>) {
        // per (quintile, wave): mean & sd of assets among alive; plus per
        // quintile: mean before-death assets.
        let mut table = vec![vec![(0.0, 0.0, 0usize); 6]; 5];
        let mut sums = vec![vec![0.0f64; 6]; 5];
        let mut sqs = vec![vec![0.0f64; 6]; 5];
        let mut counts = vec![vec![0usize; 6]; 5];
        let mut bd_sum = vec![0.0f64; 5];
        let mut bd_n = vec![0usize; 5];
        for (i, ind) in panel.individuals.iter().enumerate() {
            let q = quintiles[i];
            for (w, obs) in ind.waves.iter().enumerate() {
                if obs.alive {
                    sums[q][w] += obs.assets;
                    sqs[q][w] += obs.assets * obs.assets;
                    counts[q][w] += 1;
                }
            }
            if !ind.waves[5].alive {
                if let Some(last) = ind.waves.iter().rev().find(|w| w.alive) {
                    bd_sum[q] += last.assets;
                    bd_n[q] += 1;
                }
            }
        }
        for q in 0..5 {
            for w in 0..6 {
                let c = counts[q][w].max(1);
                let mean = sums[q][w] / c as f64;
                let var = (sqs[q][w] / c as f64 - mean * mean).max(0.0);
                table[q][w] = (mean, var.sqrt(), counts[q][w]);
            }
        }
        let bd: Vec<f64> = (0..5).map(|q| bd_sum[q] / bd_n[q].max(1) as f64).collect();
        (table, bd)
    };
    let (t0, bd0) = stats(&truth);

    let devs: Vec<(&str, [f64; 3])> = vec![
        ("ridge(2.2,.15,16.5k)", [2.227, 0.146, 16_497.0]),
        ("nu-1(2.8,.25,10k)   ", [2.8, 0.25, 10_000.0]),
        ("comp(3.0,.20,13k)   ", [3.0, 0.20, 13_000.0]),
        ("comp(4.6,.31,7k)    ", [4.6, 0.31, 7_000.0]),
    ];
    for (label, theta) in devs {
        let dev = run(theta);
        let (t1, bd1) = stats(&dev);
        let mut worst: f64 = 0.0;
        let mut worst_where = String::new();
        for q in 0..5 {
            for w in 0..6 {
                let (m0, sd0, c0) = t0[q][w];
                let (m1, _, _) = t1[q][w];
                if c0 < 50 {
                    continue;
                }
                // SE for a group of the same share in an n=2000 panel.
                let group_n = n_target * (c0 as f64 / n as f64);
                let se = sd0 / group_n.sqrt() * std::f64::consts::SQRT_2;
                let t = (m1 - m0) / se;
                if t.abs() > worst.abs() {
                    worst = t;
                    worst_where = format!("q{} wave{} ({:.1}k vs {:.1}k)", q + 1, w, m1 / 1e3, m0 / 1e3);
                }
            }
        }
        let bd_shift: Vec<String> = (0..5)
            .map(|q| format!("{:+.1}%", (bd1[q] - bd0[q]) / bd0[q].max(1.0) * 100.0))
            .collect();
        println!("{label}: worst |t|={:.1} at {worst_where}; before-death shift {:?}", worst.abs(), bd_shift);
    }
}
