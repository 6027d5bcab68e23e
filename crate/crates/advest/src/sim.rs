//! Common random shocks, life-history simulation, and discriminator
//! feature construction.
//!
//! Shocks are drawn once per estimation run and held fixed across every
//! parameter evaluation, so the simulated panel is a deterministic function
//! of the preference parameters.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dp::{
    government_transfer, net_resources, AgeRange, ExogenousProcesses, Gender, PolicySolution,
};
use crate::error::{Error, Result};
use crate::seed;

/// Biyearly survey waves covered by every panel.
pub const WAVE_YEARS: [u32; 6] = [1996, 1998, 2000, 2002, 2004, 2006];
pub const N_WAVES: usize = WAVE_YEARS.len();

/// Per-individual shock streams: uniforms for the health and survival
/// transitions, standard normals for the persistent innovation and the
/// transitory medical shock, one of each per model age.
#[derive(Debug, Clone, PartialEq)]
pub struct IndividualShocks {
    pub health_u: Vec<f64>,
    pub surv_u: Vec<f64>,
    pub eps: Vec<f64>,
    pub xi: Vec<f64>,
}

/// Fixed shock set for a simulated population.
#[derive(Debug, Clone, PartialEq)]
pub struct ShockSet {
    pub seed: u64,
    pub ages: AgeRange,
    individuals: Vec<IndividualShocks>,
}

impl ShockSet {
    pub fn len(&self) -> usize {
        self.individuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.individuals.is_empty()
    }

    #[inline]
    pub fn individual(&self, i: usize) -> &IndividualShocks {
        &self.individuals[i]
    }

    /// New set holding the selected individuals (with repetition allowed);
    /// the bootstrap resamples shock streams through this.
    pub fn resample(&self, idx: &[usize]) -> ShockSet {
        ShockSet {
            seed: self.seed,
            ages: self.ages,
            individuals: idx.iter().map(|&i| self.individuals[i].clone()).collect(),
        }
    }
}

/// Draws the common-random-number shock set for `m` individuals.
pub fn draw_shocks(m: usize, ages: AgeRange, master_seed: u64) -> Result<ShockSet> {
    if m == 0 {
        return Err(Error::Domain("draw_shocks: population size must be at least 1".into()));
    }
    let na = ages.len();
    let individuals: Vec<IndividualShocks> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(master_seed, i as u64));
            let mut s = IndividualShocks {
                health_u: Vec::with_capacity(na),
                surv_u: Vec::with_capacity(na),
                eps: Vec::with_capacity(na),
                xi: Vec::with_capacity(na),
            };
            for _ in 0..na {
                s.health_u.push(rng.random::<f64>());
                s.surv_u.push(rng.random::<f64>());
                s.eps.push(rng.sample(StandardNormal));
                s.xi.push(rng.sample(StandardNormal));
            }
            s
        })
        .collect();
    Ok(ShockSet { seed: master_seed, ages, individuals })
}

/// State an individual enters 1996 with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialState {
    pub gender: Gender,
    pub pi: f64,
    pub age_1996: u32,
    pub assets: f64,
    pub healthy: bool,
}

/// Synthetic initial-condition distribution for pure Monte Carlo runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticInitials {
    pub age_min: u32,
    pub age_max: u32,
    pub male_share: f64,
    pub healthy_share: f64,
    /// Median of the lognormal asset draw at median PI, dollars.
    pub assets_median: f64,
    pub assets_log_sd: f64,
    /// Log-asset gradient in the PI rank.
    pub assets_pi_gradient: f64,
}

impl Default for SyntheticInitials {
    fn default() -> Self {
        Self {
            age_min: 72,
            age_max: 92,
            male_share: 0.25,
            healthy_share: 0.7,
            assets_median: 30_000.0,
            assets_log_sd: 0.4,
            assets_pi_gradient: 2.0,
        }
    }
}

/// Draws `m` synthetic initial states.
pub fn draw_synthetic_initials(
    spec: &SyntheticInitials,
    m: usize,
    master_seed: u64,
) -> Vec<InitialState> {
    (0..m)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(master_seed, 0x10_0000 + i as u64));
            let pi: f64 = rng.random::<f64>();
            let gender =
                if rng.random::<f64>() < spec.male_share { Gender::Male } else { Gender::Female };
            let healthy = rng.random::<f64>() < spec.healthy_share;
            let age_1996 = rng.random_range(spec.age_min..=spec.age_max);
            let z: f64 = rng.sample(StandardNormal);
            let assets = (spec.assets_median.ln()
                + spec.assets_pi_gradient * (pi - 0.5)
                + spec.assets_log_sd * z)
                .exp();
            InitialState { gender, pi, age_1996, assets, healthy }
        })
        .collect()
}

/// Resamples initial states from a panel's 1996 cross-section, mirroring
/// conditioning on the observed initial distribution.
pub fn initials_from_panel(panel: &Panel, m: usize, master_seed: u64) -> Result<Vec<InitialState>> {
    let pool = panel.initial_states();
    if pool.is_empty() {
        return Err(Error::Domain("initials_from_panel: panel has no individuals".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(master_seed, 0x20_0000));
    Ok((0..m).map(|_| pool[rng.random_range(0..pool.len())]).collect())
}

/// One biyearly observation; zeros with `alive = false` after death.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveObs {
    pub assets: f64,
    pub income: f64,
    pub medical: f64,
    pub healthy: bool,
    pub alive: bool,
}

impl WaveObs {
    fn dead() -> Self {
        Self { assets: 0.0, income: 0.0, medical: 0.0, healthy: false, alive: false }
    }
}

/// Life history of one individual over the six waves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndividualHistory {
    pub id: u32,
    pub gender: Gender,
    pub pi: f64,
    pub age_1996: u32,
    pub waves: Vec<WaveObs>,
}

/// A real or simulated panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub individuals: Vec<IndividualHistory>,
    pub simulated: bool,
}

impl Panel {
    pub fn len(&self) -> usize {
        self.individuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.individuals.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for ind in &self.individuals {
            if ind.waves.len() != N_WAVES {
                return Err(Error::MalformedPanel(format!(
                    "individual {}: expected {N_WAVES} waves, found {}",
                    ind.id,
                    ind.waves.len()
                )));
            }
            if !ind.waves[0].alive {
                return Err(Error::MalformedPanel(format!(
                    "individual {}: must be alive in 1996",
                    ind.id
                )));
            }
            let mut dead = false;
            for (w, obs) in ind.waves.iter().enumerate() {
                if dead && obs.alive {
                    return Err(Error::MalformedPanel(format!(
                        "individual {}: alive again at wave {w} after death",
                        ind.id
                    )));
                }
                if !obs.alive && (obs.assets != 0.0 || obs.healthy) {
                    return Err(Error::MalformedPanel(format!(
                        "individual {}: wave {w} violates the death-padding convention",
                        ind.id
                    )));
                }
                if obs.assets < 0.0 {
                    return Err(Error::MalformedPanel(format!(
                        "individual {}: negative assets at wave {w}",
                        ind.id
                    )));
                }
                dead = dead || !obs.alive;
            }
        }
        Ok(())
    }

    /// 1996 cross-section as initial states.
    pub fn initial_states(&self) -> Vec<InitialState> {
        self.individuals
            .iter()
            .map(|ind| InitialState {
                gender: ind.gender,
                pi: ind.pi,
                age_1996: ind.age_1996,
                assets: ind.waves[0].assets,
                healthy: ind.waves[0].healthy,
            })
            .collect()
    }
}

/// Abramowitz-Stegun 7.1.26 erf approximation; plenty for mapping normal
/// draws into chain-transition uniforms.
fn std_normal_cdf(z: f64) -> f64 {
    let x = z / std::f64::consts::SQRT_2;
    let t = 1.0 / (1.0 + 0.327_591_1 * x.abs());
    let poly = t
        * (0.254_829_592
            + t * (-0.284_496_736 + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
    let erf = 1.0 - poly * (-x * x).exp();
    let erf = if x >= 0.0 { erf } else { -erf };
    0.5 * (1.0 + erf)
}

/// Samples a categorical index by inverting the cumulative row at `u`.
#[inline]
fn sample_row(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u <= acc {
            return i;
        }
    }
    probs.len() - 1
}

/// One simulated model year.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YearRecord {
    pub year: u32,
    pub age: u32,
    pub assets: f64,
    pub cash: f64,
    pub consumption: f64,
    pub medical: f64,
    pub income: f64,
    pub transfer: f64,
    pub healthy: bool,
    pub zeta_idx: usize,
}

/// Simulates one individual year by year until death or `last_year`,
/// following the model timing: health and medical expenses realize, the
/// policy sets consumption, then survival realizes.
pub fn simulate_annual(
    policy: &PolicySolution,
    procs: &ExogenousProcesses,
    initial: &InitialState,
    shocks: &IndividualShocks,
    last_year: u32,
) -> Vec<YearRecord> {
    let ages = procs.ages;
    let grid = &policy.grid;
    let fiscal = &policy.fiscal;
    let r = policy.params.r;
    let mut records = Vec::new();
    let mut t = initial.age_1996.clamp(ages.min, ages.max);
    let mut assets = initial.assets.max(0.0);
    let ceiling = grid.cash.ceiling();
    if assets > ceiling {
        log::warn!("initial assets {assets:.0} above the grid ceiling; clamped to {ceiling:.0}");
        assets = ceiling;
    }
    let mut healthy = initial.healthy;
    let mut year = 1996u32;
    // Persistent shock starts from the stationary distribution of the chain.
    let mut zi = sample_row(&grid.zeta_stationary, std_normal_cdf(shocks.eps[ages.index(t)]));
    loop {
        let idx = ages.index(t);
        let psi = grid.zeta_nodes[zi] + procs.sigma_xi * shocks.xi[idx];
        let medical = procs.medical_expense(initial.gender, healthy, initial.pi, t, psi);
        let income = procs.income(initial.gender, initial.pi, t);
        let pre = net_resources(assets, income, r, fiscal);
        let transfer = government_transfer(pre, medical, fiscal);
        let cash = pre - medical + transfer;
        let consumption =
            policy.consumption_at(t, initial.gender, healthy, initial.pi, zi, cash);
        records.push(YearRecord {
            year,
            age: t,
            assets,
            cash,
            consumption,
            medical,
            income,
            transfer,
            healthy,
            zeta_idx: zi,
        });
        // Survival realizes after consumption; death at the end of the year
        // leaves the remaining assets as the estate.
        let survives = t < ages.max
            && shocks.surv_u[idx] <= procs.survival(initial.gender, healthy, initial.pi, t);
        if !survives || year >= last_year {
            break;
        }
        assets = (cash - consumption).max(0.0).min(ceiling);
        healthy = shocks.health_u[idx]
            <= procs.health_transition(initial.gender, healthy, initial.pi, t);
        zi = sample_row(&grid.zeta_trans[zi], std_normal_cdf(shocks.eps[ages.index(t + 1)]));
        t += 1;
        year += 1;
    }
    records
}

/// Simulates the biyearly panel for a population; deterministic given the
/// shock set and initial states.
pub fn simulate_panel(
    policy: &PolicySolution,
    procs: &ExogenousProcesses,
    shocks: &ShockSet,
    initials: &[InitialState],
) -> Result<Panel> {
    if shocks.len() != initials.len() {
        return Err(Error::Shape(format!(
            "simulate_panel: {} shock streams vs {} initial states",
            shocks.len(),
            initials.len()
        )));
    }
    if shocks.ages != procs.ages {
        return Err(Error::Shape("simulate_panel: shock ages do not match processes".into()));
    }
    let individuals: Vec<IndividualHistory> = (0..initials.len())
        .into_par_iter()
        .map(|i| {
            let init = &initials[i];
            let years = simulate_annual(policy, procs, init, shocks.individual(i), 2006);
            let mut waves = vec![WaveObs::dead(); N_WAVES];
            for rec in &years {
                if let Some(w) = WAVE_YEARS.iter().position(|&y| y == rec.year) {
                    waves[w] = WaveObs {
                        assets: rec.assets,
                        income: rec.income,
                        medical: rec.medical,
                        healthy: rec.healthy,
                        alive: true,
                    };
                }
            }
            IndividualHistory {
                id: i as u32,
                gender: init.gender,
                pi: init.pi,
                age_1996: init.age_1996.clamp(procs.ages.min, procs.ages.max),
                waves,
            }
        })
        .collect();
    let panel = Panel { individuals, simulated: true };
    panel.validate()?;
    Ok(panel)
}

/// Discriminator input layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSpec {
    /// Constant, log 1996 age, PI, the six asset columns (k$), and the five
    /// survival indicators from 1998 on.
    X1,
    /// `X1` plus gender and the six health indicators.
    X2,
}

impl InputSpec {
    pub fn n_cols(self) -> usize {
        match self {
            InputSpec::X1 => 14,
            InputSpec::X2 => 21,
        }
    }
}

/// Rows are individuals, columns follow the [`InputSpec`] layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub data: Array2<f64>,
    pub spec: InputSpec,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.data.nrows()
    }
}

/// Builds the discriminator features from a panel; assets are scaled to
/// thousands of dollars, decedents keep the zero-padding convention.
pub fn build_features(panel: &Panel, spec: InputSpec) -> Result<FeatureMatrix> {
    panel.validate()?;
    let n = panel.len();
    let d = spec.n_cols();
    let mut data = Array2::zeros((n, d));
    for (i, ind) in panel.individuals.iter().enumerate() {
        let mut row = data.row_mut(i);
        row[0] = 1.0;
        row[1] = (ind.age_1996 as f64).ln();
        row[2] = ind.pi;
        for w in 0..N_WAVES {
            row[3 + w] = ind.waves[w].assets / 1_000.0;
        }
        for w in 1..N_WAVES {
            row[9 + (w - 1)] = ind.waves[w].alive as u8 as f64;
        }
        if spec == InputSpec::X2 {
            row[14] = ind.gender.index() as f64;
            for w in 0..N_WAVES {
                row[15 + w] = ind.waves[w].healthy as u8 as f64;
            }
        }
    }
    Ok(FeatureMatrix { data, spec })
}

/// The twelve binary columns of an `X2` matrix (gender, the six health
/// indicators, the five survival indicators), in that order.
pub fn binary_feature_columns(fm: &FeatureMatrix) -> Result<Array2<f64>> {
    if fm.spec != InputSpec::X2 {
        return Err(Error::Shape("binary_feature_columns: requires an X2 matrix".into()));
    }
    let cols: Vec<usize> = std::iter::once(14).chain(15..21).chain(9..14).collect();
    let mut out = Array2::zeros((fm.data.nrows(), cols.len()));
    for (j, &c) in cols.iter().enumerate() {
        out.column_mut(j).assign(&fm.data.column(c));
    }
    Ok(out)
}

/// Resamples real rows with replacement up to size `m`, evening out the
/// real and simulated samples before discriminator training.
pub fn augment_real(real: &FeatureMatrix, m: usize, master_seed: u64) -> Result<FeatureMatrix> {
    let n = real.n_rows();
    if n == 0 {
        return Err(Error::Domain("augment_real: real matrix is empty".into()));
    }
    if m < n {
        return Err(Error::Domain(format!(
            "augment_real: target size {m} below the real sample size {n}"
        )));
    }
    Ok(FeatureMatrix { data: resample_rows(&real.data, m, master_seed), spec: real.spec })
}

/// Draws `m` rows with replacement from `data`, deterministically.
pub fn resample_rows(data: &Array2<f64>, m: usize, master_seed: u64) -> Array2<f64> {
    let n = data.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(master_seed, 0x30_0000));
    let mut out = Array2::zeros((m, data.ncols()));
    for i in 0..m {
        let src = rng.random_range(0..n);
        out.row_mut(i).assign(&data.row(src));
    }
    out
}

/// Gathers the given rows (repetition allowed) into a new matrix.
pub fn select_rows(data: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((idx.len(), data.ncols()));
    for (i, &src) in idx.iter().enumerate() {
        out.row_mut(i).assign(&data.row(src));
    }
    out
}

/// Writes a panel as CSV, one row per individual-wave.
pub fn write_panel_csv<W: std::io::Write>(panel: &Panel, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "id", "wave_year", "age", "gender", "pi_rank", "assets", "income", "medical", "health",
        "alive",
    ])?;
    for ind in &panel.individuals {
        for (wi, obs) in ind.waves.iter().enumerate() {
            let year = WAVE_YEARS[wi];
            w.write_record(&[
                ind.id.to_string(),
                year.to_string(),
                (ind.age_1996 + (year - 1996)).to_string(),
                ind.gender.index().to_string(),
                ind.pi.to_string(),
                obs.assets.to_string(),
                obs.income.to_string(),
                obs.medical.to_string(),
                (obs.healthy as u8).to_string(),
                (obs.alive as u8).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a panel written by [`write_panel_csv`]; waves must be complete and
/// in order for every individual.
pub fn read_panel_csv<R: std::io::Read>(reader: R, simulated: bool) -> Result<Panel> {
    let mut r = csv::Reader::from_reader(reader);
    let mut individuals: Vec<IndividualHistory> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let field = |i: usize| -> Result<&str> {
            rec.get(i).ok_or_else(|| Error::MalformedPanel(format!("missing column {i}")))
        };
        let parse = |i: usize| -> Result<f64> {
            field(i)?
                .parse::<f64>()
                .map_err(|e| Error::MalformedPanel(format!("column {i}: {e}")))
        };
        let id = parse(0)? as u32;
        let year = parse(1)? as u32;
        let age = parse(2)? as u32;
        let gender = Gender::from_index(parse(3)? as usize)?;
        let pi = parse(4)?;
        let obs = WaveObs {
            assets: parse(5)?,
            income: parse(6)?,
            medical: parse(7)?,
            healthy: parse(8)? != 0.0,
            alive: parse(9)? != 0.0,
        };
        let wave = WAVE_YEARS
            .iter()
            .position(|&y| y == year)
            .ok_or_else(|| Error::MalformedPanel(format!("unknown wave year {year}")))?;
        if individuals.last().map(|i: &IndividualHistory| i.id) != Some(id) {
            individuals.push(IndividualHistory {
                id,
                gender,
                pi,
                age_1996: age - (year - 1996),
                waves: Vec::with_capacity(N_WAVES),
            });
        }
        let ind = individuals.last_mut().unwrap();
        if ind.waves.len() != wave {
            return Err(Error::MalformedPanel(format!(
                "individual {id}: wave {year} out of order or missing a prior wave"
            )));
        }
        ind.waves.push(obs);
    }
    let panel = Panel { individuals, simulated };
    panel.validate()?;
    Ok(panel)
}

/// Dumps a feature matrix as CSV for inspection.
pub fn write_features_csv<W: std::io::Write>(fm: &FeatureMatrix, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let header: Vec<String> = (0..fm.data.ncols()).map(|j| format!("c{j}")).collect();
    w.write_record(&header)?;
    for row in fm.data.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
