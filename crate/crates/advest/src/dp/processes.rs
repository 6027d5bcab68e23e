//! Exogenous processes: survival and health transitions, medical-expense
//! location/scale, shock variances, and nonasset income.
//!
//! Tables are indexed by gender, health, permanent-income node, and age.
//! Queries at a continuous permanent-income rank interpolate linearly
//! between nodes, so the solver (which sits exactly on nodes) and the
//! simulator (which does not) share one code path.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gender axis; `Female = 0`, `Male = 1` everywhere a table is indexed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Female,
    Male,
}

impl Gender {
    #[inline]
    pub fn index(self) -> usize {
        match self {
            Gender::Female => 0,
            Gender::Male => 1,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(Gender::Female),
            1 => Ok(Gender::Male),
            _ => Err(Error::Domain(format!("gender index must be 0 or 1, got {i}"))),
        }
    }
}

/// Inclusive model age range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgeRange {
    pub min: u32,
    pub max: u32,
}

impl AgeRange {
    pub fn len(&self) -> usize {
        (self.max - self.min + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.max < self.min
    }

    #[inline]
    pub fn index(&self, t: u32) -> usize {
        debug_assert!(t >= self.min && t <= self.max);
        (t - self.min) as usize
    }
}

/// Table over (gender, health, PI node, age); row-major in that order.
pub type Table4 = Vec<Vec<Vec<Vec<f64>>>>;
/// Table over (gender, PI node, age).
pub type Table3 = Vec<Vec<Vec<f64>>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExogenousProcesses {
    pub ages: AgeRange,
    /// Strictly increasing permanent-income rank nodes in [0, 1].
    pub pi_nodes: Vec<f64>,
    /// Survival probability to the next period, `[g][h][pi][age]`.
    pub survival: Table4,
    /// Probability of being healthy next period, `[g][h][pi][age]`.
    pub health: Table4,
    /// Location of log medical expenses, `[g][h][pi][age]`.
    pub med_loc: Table4,
    /// Scale of log medical expenses, `[g][h][pi][age]`; nonnegative.
    pub med_scale: Table4,
    /// Nonasset income in dollars, `[g][pi][age]`.
    pub income: Table3,
    /// AR(1) persistence of the persistent medical shock.
    pub rho: f64,
    /// Standard deviation of the transitory medical shock.
    pub sigma_xi: f64,
    /// Standard deviation of the persistent-shock innovation.
    pub sigma_eps: f64,
    /// Cap on realized medical expenses in dollars.
    pub medical_cap: f64,
}

impl ExogenousProcesses {
    pub fn validate(&self) -> Result<()> {
        if self.ages.is_empty() {
            return Err(Error::Config("processes.ages: empty age range".into()));
        }
        if self.pi_nodes.len() < 2 {
            return Err(Error::Config("processes.pi_nodes: need at least 2 nodes".into()));
        }
        for w in self.pi_nodes.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Config("processes.pi_nodes: must be strictly increasing".into()));
            }
        }
        if self.pi_nodes[0] < 0.0 || *self.pi_nodes.last().unwrap() > 1.0 {
            return Err(Error::Config("processes.pi_nodes: must lie in [0, 1]".into()));
        }
        if !(self.rho.abs() < 1.0) {
            return Err(Error::Config(format!("processes.rho: |rho| must be < 1, got {}", self.rho)));
        }
        if self.sigma_xi < 0.0 || self.sigma_eps < 0.0 {
            return Err(Error::Config("processes.sigma: shock deviations must be nonnegative".into()));
        }
        if !(self.medical_cap > 0.0) {
            return Err(Error::Config("processes.medical_cap: must be positive".into()));
        }
        let (np, na) = (self.pi_nodes.len(), self.ages.len());
        for (name, tbl, prob) in [
            ("survival", &self.survival, true),
            ("health", &self.health, true),
            ("med_loc", &self.med_loc, false),
            ("med_scale", &self.med_scale, false),
        ] {
            if tbl.len() != 2 || tbl.iter().any(|h| h.len() != 2) {
                return Err(Error::Config(format!("processes.{name}: outer dims must be 2x2")));
            }
            for g in tbl {
                for h in g {
                    if h.len() != np || h.iter().any(|a| a.len() != na) {
                        return Err(Error::Config(format!(
                            "processes.{name}: expected {np} PI rows of {na} ages"
                        )));
                    }
                    for row in h {
                        for &v in row {
                            if prob && !(0.0..=1.0).contains(&v) {
                                return Err(Error::Config(format!(
                                    "processes.{name}: probability {v} outside [0, 1]"
                                )));
                            }
                            if name == "med_scale" && v < 0.0 {
                                return Err(Error::Config(
                                    "processes.med_scale: must be nonnegative".into(),
                                ));
                            }
                        }
                    }
                }
            }
        }
        if self.income.len() != 2
            || self
                .income
                .iter()
                .any(|g| g.len() != np || g.iter().any(|p| p.len() != na))
        {
            return Err(Error::Config("processes.income: expected [2][pi][age] table".into()));
        }
        // Terminal age forces death.
        for g in &self.survival {
            for h in g {
                for row in h {
                    if *row.last().unwrap() != 0.0 {
                        return Err(Error::Config(
                            "processes.survival: terminal-age survival must be 0".into(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    #[inline]
    fn pi_bracket(&self, pi: f64) -> (usize, f64) {
        let n = self.pi_nodes.len();
        if pi <= self.pi_nodes[0] {
            return (0, 0.0);
        }
        if pi >= self.pi_nodes[n - 1] {
            return (n - 2, 1.0);
        }
        let mut i = match self.pi_nodes.binary_search_by(|v| v.partial_cmp(&pi).unwrap()) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        i = i.min(n - 2);
        let w = (pi - self.pi_nodes[i]) / (self.pi_nodes[i + 1] - self.pi_nodes[i]);
        (i, w)
    }

    #[inline]
    fn at4(&self, tbl: &Table4, g: Gender, healthy: bool, pi: f64, t: u32) -> f64 {
        let rows = &tbl[g.index()][healthy as usize];
        let a = self.ages.index(t);
        let (i, w) = self.pi_bracket(pi);
        rows[i][a] * (1.0 - w) + rows[i + 1][a] * w
    }

    /// Probability of surviving from age `t` to `t + 1`.
    #[inline]
    pub fn survival(&self, g: Gender, healthy: bool, pi: f64, t: u32) -> f64 {
        self.at4(&self.survival, g, healthy, pi, t)
    }

    /// Probability of being healthy at `t + 1` given health at `t`.
    #[inline]
    pub fn health_transition(&self, g: Gender, healthy: bool, pi: f64, t: u32) -> f64 {
        self.at4(&self.health, g, healthy, pi, t)
    }

    #[inline]
    pub fn med_loc(&self, g: Gender, healthy: bool, pi: f64, t: u32) -> f64 {
        self.at4(&self.med_loc, g, healthy, pi, t)
    }

    #[inline]
    pub fn med_scale(&self, g: Gender, healthy: bool, pi: f64, t: u32) -> f64 {
        self.at4(&self.med_scale, g, healthy, pi, t)
    }

    /// Nonasset income at age `t`.
    #[inline]
    pub fn income(&self, g: Gender, pi: f64, t: u32) -> f64 {
        let rows = &self.income[g.index()];
        let a = self.ages.index(t);
        let (i, w) = self.pi_bracket(pi);
        rows[i][a] * (1.0 - w) + rows[i + 1][a] * w
    }

    /// Realized medical expense for a combined shock `psi = zeta + xi`,
    /// capped at `medical_cap`.
    #[inline]
    pub fn medical_expense(&self, g: Gender, healthy: bool, pi: f64, t: u32, psi: f64) -> f64 {
        let logm = self.med_loc(g, healthy, pi, t) + self.med_scale(g, healthy, pi, t) * psi;
        logm.exp().min(self.medical_cap)
    }

    /// Copy with the medical-expense scale set to zero everywhere, so
    /// `log m = med_loc` deterministically.
    pub fn without_medical_risk(&self) -> Self {
        let mut out = self.clone();
        for g in &mut out.med_scale {
            for h in g {
                for row in h {
                    row.iter_mut().for_each(|v| *v = 0.0);
                }
            }
        }
        out
    }
}

/// Logistic-in-age synthetic calibration.
///
/// Ships so every command runs without external process tables; the
/// coefficients are documented defaults, not survey estimates. Survival and
/// health-persistence fall with age on the logit scale, medical expenses
/// rise log-linearly with age and worsen when unhealthy, and the shock
/// dispersion grows with age.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticCalibration {
    pub survival_base: f64,
    pub survival_age: f64,
    pub survival_healthy: f64,
    pub survival_pi: f64,
    pub survival_male: f64,
    pub health_stay_base: f64,
    pub health_stay_age: f64,
    pub health_recover_base: f64,
    pub health_recover_age: f64,
    pub health_pi: f64,
    /// Median medical expense at the youngest healthy age, dollars.
    pub med_base: f64,
    pub med_age: f64,
    pub med_unhealthy: f64,
    pub med_pi: f64,
    pub med_scale_base: f64,
    pub med_scale_age: f64,
    pub med_scale_unhealthy: f64,
    /// Income floor plus a PI gradient and a small gender gap, dollars.
    pub income_base: f64,
    pub income_pi: f64,
    pub income_male: f64,
    pub rho: f64,
    pub sigma_xi: f64,
    pub sigma_eps: f64,
}

impl Default for SyntheticCalibration {
    fn default() -> Self {
        Self {
            survival_base: 4.1,
            survival_age: -5.2,
            survival_healthy: 1.5,
            survival_pi: 1.6,
            survival_male: -0.7,
            health_stay_base: 3.2,
            health_stay_age: -2.0,
            health_recover_base: -0.8,
            health_recover_age: -1.2,
            health_pi: 0.5,
            med_base: 2_500.0,
            med_age: 1.6,
            med_unhealthy: 0.5,
            med_pi: 0.5,
            med_scale_base: 0.9,
            med_scale_age: 0.3,
            med_scale_unhealthy: 0.2,
            income_base: 8_000.0,
            income_pi: 8_000.0,
            income_male: 1_200.0,
            rho: 0.922,
            sigma_xi: 0.3,
            sigma_eps: 0.45,
        }
    }
}

#[inline]
fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl SyntheticCalibration {
    pub fn generate(&self, ages: AgeRange, n_pi: usize, medical_cap: f64) -> Result<ExogenousProcesses> {
        if n_pi < 2 {
            return Err(Error::Config("grid.n_pi: need at least 2 PI nodes".into()));
        }
        let pi_nodes: Vec<f64> = (0..n_pi).map(|i| i as f64 / (n_pi - 1) as f64).collect();
        let na = ages.len();
        let span = (ages.max - ages.min).max(1) as f64;
        let mut survival = vec![vec![vec![vec![0.0; na]; n_pi]; 2]; 2];
        let mut health = survival.clone();
        let mut med_loc = survival.clone();
        let mut med_scale = survival.clone();
        let mut income = vec![vec![vec![0.0; na]; n_pi]; 2];
        for gi in 0..2 {
            let male = gi as f64;
            for (pi_idx, &pi) in pi_nodes.iter().enumerate() {
                for a in 0..na {
                    let t = ages.min + a as u32;
                    let tn = (t - ages.min) as f64 / span;
                    for hi in 0..2 {
                        let healthy = hi as f64;
                        let surv = if t == ages.max {
                            0.0
                        } else {
                            logistic(
                                self.survival_base
                                    + self.survival_age * tn
                                    + self.survival_healthy * healthy
                                    + self.survival_pi * (pi - 0.5)
                                    + self.survival_male * male,
                            )
                        };
                        survival[gi][hi][pi_idx][a] = surv;
                        let hlogit = if hi == 1 {
                            self.health_stay_base + self.health_stay_age * tn
                        } else {
                            self.health_recover_base + self.health_recover_age * tn
                        };
                        health[gi][hi][pi_idx][a] =
                            logistic(hlogit + self.health_pi * (pi - 0.5));
                        med_loc[gi][hi][pi_idx][a] = self.med_base.ln()
                            + self.med_age * tn
                            + self.med_unhealthy * (1.0 - healthy)
                            + self.med_pi * pi;
                        med_scale[gi][hi][pi_idx][a] = self.med_scale_base
                            + self.med_scale_age * tn
                            + self.med_scale_unhealthy * (1.0 - healthy);
                    }
                    income[gi][pi_idx][a] =
                        self.income_base + self.income_pi * pi + self.income_male * male;
                }
            }
        }
        let procs = ExogenousProcesses {
            ages,
            pi_nodes,
            survival,
            health,
            med_loc,
            med_scale,
            income,
            rho: self.rho,
            sigma_xi: self.sigma_xi,
            sigma_eps: self.sigma_eps,
            medical_cap,
        };
        procs.validate()?;
        Ok(procs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ages() -> AgeRange {
        AgeRange { min: 70, max: 100 }
    }

    #[test]
    fn synthetic_generates_valid_tables() {
        let procs = SyntheticCalibration::default().generate(ages(), 10, 2e6).unwrap();
        procs.validate().unwrap();
        // Forced terminal death.
        assert_eq!(procs.survival(Gender::Female, true, 0.5, 100), 0.0);
        // Survival falls with age, rises with health and PI, higher for women.
        let s = |g, h, pi, t| procs.survival(g, h, pi, t);
        assert!(s(Gender::Female, true, 0.5, 72) > s(Gender::Female, true, 0.5, 95));
        assert!(s(Gender::Female, true, 0.5, 85) > s(Gender::Female, false, 0.5, 85));
        assert!(s(Gender::Female, true, 0.9, 85) > s(Gender::Female, true, 0.1, 85));
        assert!(s(Gender::Female, true, 0.5, 85) > s(Gender::Male, true, 0.5, 85));
        // Medical expenses rise with age; unhealthy costs more.
        assert!(
            procs.med_loc(Gender::Male, true, 0.5, 95) > procs.med_loc(Gender::Male, true, 0.5, 72)
        );
        assert!(
            procs.med_loc(Gender::Male, false, 0.5, 85)
                > procs.med_loc(Gender::Male, true, 0.5, 85)
        );
    }

    #[test]
    fn pi_interpolation_is_linear_between_nodes() {
        let procs = SyntheticCalibration::default().generate(ages(), 5, 2e6).unwrap();
        // Nodes at 0, .25, .5, .75, 1. Interpolate halfway between two.
        let lo = procs.income(Gender::Female, 0.25, 80);
        let hi = procs.income(Gender::Female, 0.5, 80);
        let mid = procs.income(Gender::Female, 0.375, 80);
        assert_relative_eq!(mid, 0.5 * (lo + hi), max_relative = 1e-12);
        // Clamped outside the node range.
        assert_relative_eq!(
            procs.income(Gender::Female, -0.2, 80),
            procs.income(Gender::Female, 0.0, 80)
        );
    }

    #[test]
    fn degenerate_medical_scale_gives_deterministic_expenses() {
        let procs = SyntheticCalibration::default()
            .generate(ages(), 4, 2e6)
            .unwrap()
            .without_medical_risk();
        let m1 = procs.medical_expense(Gender::Male, true, 0.5, 80, 0.0);
        let m2 = procs.medical_expense(Gender::Male, true, 0.5, 80, 2.5);
        assert_relative_eq!(m1, m2, max_relative = 1e-15);
        assert_relative_eq!(m1, procs.med_loc(Gender::Male, true, 0.5, 80).exp());
    }

    #[test]
    fn medical_cap_binds() {
        let procs = SyntheticCalibration::default().generate(ages(), 4, 10_000.0).unwrap();
        let m = procs.medical_expense(Gender::Male, false, 0.9, 99, 8.0);
        assert_eq!(m, 10_000.0);
    }

    #[test]
    fn json_round_trip() {
        let procs = SyntheticCalibration::default().generate(ages(), 3, 2e6).unwrap();
        let text = serde_json::to_string(&procs).unwrap();
        let back: ExogenousProcesses = serde_json::from_str(&text).unwrap();
        back.validate().unwrap();
        assert_eq!(back.pi_nodes, procs.pi_nodes);
        assert_eq!(back.survival, procs.survival);
    }
}
