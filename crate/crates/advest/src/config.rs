//! JSON run configuration.
//!
//! One document drives every subcommand; unknown keys are rejected and the
//! fully resolved config (after CLI overrides) is written next to the
//! outputs of each run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adversarial::{Accelerator, EstimationConfig, InitRule, RpropConfig};
use crate::dp::{ExogenousProcesses, GridConfig, SyntheticCalibration};
use crate::error::{Error, Result};
use crate::inference::CounterfactualMode;
use crate::nn::TrainConfig;
use crate::params::{FiscalParams, PreferenceParams};
use crate::seed;
use crate::sim::{InputSpec, SyntheticInitials};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    pub nu: f64,
    pub mpc: f64,
    pub k_curv: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_r")]
    pub r: f64,
    #[serde(default)]
    pub fiscal: FiscalParams,
}

fn default_beta() -> f64 {
    0.971
}

fn default_r() -> f64 {
    0.02
}

impl ParamsSection {
    pub fn preference_params(&self) -> Result<PreferenceParams> {
        PreferenceParams::new(self.nu, self.mpc, self.k_curv, self.beta, self.r)
    }
}

/// Where the exogenous process tables come from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessesSection {
    /// Generated from the documented logistic-in-age calibration.
    Synthetic(SyntheticCalibration),
    /// Loaded from a JSON document of per-(g, h, PI-node, age) tables.
    File(PathBuf),
}

impl Default for ProcessesSection {
    fn default() -> Self {
        ProcessesSection::Synthetic(SyntheticCalibration::default())
    }
}

/// Where simulated individuals start from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialsSection {
    Synthetic(SyntheticInitials),
    /// Resample the 1996 cross-section of the real panel (`io.real_panel`).
    FromRealPanel,
}

impl Default for InitialsSection {
    fn default() -> Self {
        InitialsSection::Synthetic(SyntheticInitials::default())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    /// Simulated population size.
    pub m: usize,
    /// Master seed; every stream in a run derives from it.
    pub seed: u64,
    pub initials: InitialsSection,
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self { m: 2_000, seed: 1, initials: InitialsSection::default() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorSection {
    /// Hidden layer widths (at most two layers).
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
}

impl Default for DiscriminatorSection {
    fn default() -> Self {
        Self { hidden: vec![20, 10], train: TrainConfig::default() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimationSection {
    pub input_spec: InputSpec,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub fd_steps: Vec<f64>,
    pub learning_rate: f64,
    pub accelerator: Accelerator,
    pub nag_momentum: f64,
    pub rprop: RpropConfig,
    pub grad_tol: f64,
    pub max_iters: usize,
    pub restarts: usize,
    pub init: InitRule,
}

impl Default for EstimationSection {
    fn default() -> Self {
        let base = EstimationConfig::lifecycle_default(0);
        Self {
            input_spec: InputSpec::X1,
            lower: base.lower,
            upper: base.upper,
            fd_steps: base.fd_steps,
            learning_rate: base.learning_rate,
            accelerator: base.accelerator,
            nag_momentum: base.nag_momentum,
            rprop: base.rprop,
            grad_tol: base.grad_tol,
            max_iters: base.max_iters,
            restarts: base.restarts,
            init: base.init,
        }
    }
}

impl EstimationSection {
    pub fn to_config(&self, seed_value: u64) -> EstimationConfig {
        EstimationConfig {
            lower: self.lower.clone(),
            upper: self.upper.clone(),
            fd_steps: self.fd_steps.clone(),
            learning_rate: self.learning_rate,
            accelerator: self.accelerator,
            nag_momentum: self.nag_momentum,
            rprop: self.rprop,
            grad_tol: self.grad_tol,
            max_iters: self.max_iters,
            restarts: self.restarts,
            seed: seed_value,
            init: self.init.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceSection {
    pub bootstrap_replications: usize,
    pub mc_replications: usize,
    /// Individuals per synthetic Monte Carlo economy.
    pub mc_n: usize,
    pub counterfactual_mode: CounterfactualMode,
    pub probe_d_min: usize,
    pub probe_d_max: usize,
    pub fit_by_gender: bool,
    /// Drop observations above this quantile of real assets in fit tables.
    pub fit_trim_quantile: Option<f64>,
}

impl Default for InferenceSection {
    fn default() -> Self {
        Self {
            bootstrap_replications: 50,
            mc_replications: 10,
            mc_n: 2_000,
            counterfactual_mode: CounterfactualMode::NoBequest,
            probe_d_min: 1,
            probe_d_max: 12,
            fit_by_gender: true,
            fit_trim_quantile: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoSection {
    pub out_dir: PathBuf,
    /// Path to a real panel CSV; absent means pure Monte Carlo mode.
    pub real_panel: Option<PathBuf>,
}

impl Default for IoSection {
    fn default() -> Self {
        Self { out_dir: PathBuf::from("out"), real_panel: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub params: ParamsSection,
    #[serde(default)]
    pub processes: ProcessesSection,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub discriminator: DiscriminatorSection,
    #[serde(default)]
    pub estimation: EstimationSection,
    #[serde(default)]
    pub inference: InferenceSection,
    #[serde(default)]
    pub io: IoSection,
}

impl RunConfig {
    /// Parses and validates a config document.
    pub fn from_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("config schema: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
        Self::from_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.params
            .preference_params()
            .map_err(|e| Error::Config(format!("params: {e}")))?;
        self.params.fiscal.validate()?;
        self.grid.validate()?;
        if self.simulation.m == 0 {
            return Err(Error::Config("simulation.m: must be at least 1".into()));
        }
        if self.discriminator.hidden.len() > 2 {
            return Err(Error::Config(
                "discriminator.hidden: at most two hidden layers".into(),
            ));
        }
        self.discriminator.train.validate()?;
        let est = self.estimation.to_config(0);
        est.validate(3)?;
        if est.upper[1] > 1.0 || est.lower[1] <= 0.0 {
            return Err(Error::Config("estimation: the MPC box must lie inside (0, 1]".into()));
        }
        if self.inference.probe_d_min == 0
            || self.inference.probe_d_min > self.inference.probe_d_max
            || self.inference.probe_d_max > 12
        {
            return Err(Error::Config("inference.probe: range must sit inside [1, 12]".into()));
        }
        if let Some(q) = self.inference.fit_trim_quantile {
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::Config(
                    "inference.fit_trim_quantile: must lie in [0, 1]".into(),
                ));
            }
        }
        if matches!(self.simulation.initials, InitialsSection::FromRealPanel)
            && self.io.real_panel.is_none()
        {
            return Err(Error::Config(
                "simulation.initials: from_real_panel requires io.real_panel".into(),
            ));
        }
        Ok(())
    }

    /// Builds the process tables, from file or the synthetic calibration.
    pub fn build_processes(&self) -> Result<ExogenousProcesses> {
        match &self.processes {
            ProcessesSection::Synthetic(cal) => {
                cal.generate(self.grid.ages(), self.grid.n_pi, self.grid.medical_cap)
            }
            ProcessesSection::File(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("processes {}: {e}", path.display())))?;
                let procs: ExogenousProcesses = serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("processes {}: {e}", path.display())))?;
                procs.validate()?;
                Ok(procs)
            }
        }
    }

    /// The run's master seed and a derived stream for a named stage.
    pub fn stage_seed(&self, stage: u64) -> u64 {
        seed::derive(self.simulation.seed, stage)
    }

    pub fn to_pretty_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> &'static str {
        r#"{ "params": { "nu": 3.8, "mpc": 0.25, "k_curv": 10000.0 } }"#
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = RunConfig::from_str(minimal_json()).unwrap();
        assert_eq!(cfg.params.beta, 0.971);
        assert_eq!(cfg.params.r, 0.02);
        assert_eq!(cfg.simulation.m, 2_000);
        assert_eq!(cfg.grid.n_cash, 200);
        assert_eq!(cfg.discriminator.hidden, vec![20, 10]);
        let procs = cfg.build_processes().unwrap();
        procs.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected_with_context() {
        let bad = r#"{ "params": { "nu": 3.8, "mpc": 0.25, "k_curv": 10000.0, "bogus": 1 } }"#;
        let err = RunConfig::from_str(bad).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        let bad2 = r#"{ "params": { "nu": 3.8, "mpc": 0.25, "k_curv": 10000.0 }, "extra": {} }"#;
        assert!(RunConfig::from_str(bad2).is_err());
    }

    #[test]
    fn invalid_values_carry_precise_paths() {
        let log_utility = r#"{ "params": { "nu": 1.0, "mpc": 0.25, "k_curv": 10000.0 } }"#;
        let err = RunConfig::from_str(log_utility).unwrap_err();
        assert!(err.to_string().contains("params"), "{err}");
        let bad_probe = r#"{
            "params": { "nu": 3.8, "mpc": 0.25, "k_curv": 10000.0 },
            "inference": { "probe_d_min": 5, "probe_d_max": 2 }
        }"#;
        let err = RunConfig::from_str(bad_probe).unwrap_err();
        assert!(err.to_string().contains("probe"), "{err}");
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = RunConfig::from_str(minimal_json()).unwrap();
        let text = cfg.to_pretty_json().unwrap();
        let back = RunConfig::from_str(&text).unwrap();
        assert_eq!(text, back.to_pretty_json().unwrap());
    }
}
