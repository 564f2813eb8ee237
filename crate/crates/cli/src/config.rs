//! Experiment configuration: a TOML file with every knob, all of which have
//! defaults, so `run --scenario abrupt` works with no config at all.

use std::path::PathBuf;
use std::str::FromStr;

use beambandit::bandit::{GammaMode, ProjectionScope};
use beambandit::env::{ChannelModel, Drift, SyntheticModel};
use beambandit::kernels::KernelSpec;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Which environment the experiment runs against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    /// Channel redrawn at fixed change slots.
    Abrupt,
    /// Gauss-Markov gain drift with small angle steps each slot.
    Slow,
    /// Kernel-expansion functions with drifting weights.
    Synthetic,
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "abrupt" => Ok(Self::Abrupt),
            "slow" => Ok(Self::Slow),
            "synthetic" => Ok(Self::Synthetic),
            other => Err(format!("unknown scenario {other:?} (expected abrupt, slow, synthetic)")),
        }
    }
}

/// Learner variants compared by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// Restart schedule without budget knowledge: W = gain^{1/4} sqrt(T).
    RestartUnknown,
    /// Restart schedule using the trace's variation budget.
    RestartKnown,
    /// Constrained GP-UCB baseline that never restarts.
    NoRestart,
}

impl Algorithm {
    pub fn slug(&self) -> &'static str {
        match self {
            Algorithm::RestartUnknown => "restart-unknown",
            Algorithm::RestartKnown => "restart-known",
            Algorithm::NoRestart => "no-restart",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    Se,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub antennas: usize,
    pub beams: usize,
    pub paths: usize,
    pub interferers: usize,
    pub carrier_freq_ghz: f64,
    /// Abrupt scenario change slots.
    pub change_times: Vec<usize>,
    /// Slow/synthetic drift parameters.
    pub ar_coefficient: f64,
    pub innovation_std: f64,
    /// Interference thresholds sit at this RSS quantile per protected user.
    pub xi_quantile: f64,
    /// Observation noise std as a fraction of the realized reward bound.
    pub noise_scale: f64,
    /// Kernel sections per function in the synthetic scenario.
    pub centers: usize,
}

impl Default for EnvSection {
    fn default() -> Self {
        Self {
            antennas: 4,
            beams: 100,
            paths: 10,
            interferers: 2,
            carrier_freq_ghz: 60.0,
            change_times: vec![100, 300],
            ar_coefficient: 0.99,
            innovation_std: 0.01,
            xi_quantile: 0.6,
            noise_scale: 0.05,
            centers: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSection {
    pub kind: KernelFamily,
    pub length_scale: f64,
    /// Constraint kernel defaults to the reward kernel.
    pub constraint_kind: Option<KernelFamily>,
    pub constraint_length_scale: Option<f64>,
}

impl Default for KernelSection {
    fn default() -> Self {
        Self { kind: KernelFamily::Se, length_scale: 1.0, constraint_kind: None, constraint_length_scale: None }
    }
}

impl KernelSection {
    pub fn reward_kernel(&self, input_dim: usize) -> Result<KernelSpec, CliError> {
        build_kernel(self.kind, self.length_scale, input_dim)
    }

    pub fn constraint_kernel(&self, input_dim: usize) -> Result<KernelSpec, CliError> {
        build_kernel(
            self.constraint_kind.unwrap_or(self.kind),
            self.constraint_length_scale.unwrap_or(self.length_scale),
            input_dim,
        )
    }
}

fn build_kernel(family: KernelFamily, length_scale: f64, input_dim: usize) -> Result<KernelSpec, CliError> {
    match family {
        KernelFamily::Se => KernelSpec::squared_exponential(length_scale, input_dim),
        KernelFamily::Linear => KernelSpec::linear(input_dim),
    }
    .map_err(|e| CliError::Config(e.to_string()))
}

/// Learner hyperparameters; the optional fields override trace-derived values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BanditSection {
    pub regularizer: f64,
    pub confidence: f64,
    pub gamma_mode: GammaMode,
    pub projection: ProjectionScope,
    pub reward_bound: Option<f64>,
    pub constraint_bound: Option<f64>,
    pub slater_margin: Option<f64>,
    pub dual_cap: Option<f64>,
    pub dual_step: Option<f64>,
    pub noise_level: Option<f64>,
    pub restart_period: Option<usize>,
}

impl Default for BanditSection {
    fn default() -> Self {
        Self {
            regularizer: 0.2,
            confidence: 0.1,
            gamma_mode: GammaMode::Realized,
            projection: ProjectionScope::MeanOnly,
            reward_bound: None,
            constraint_bound: None,
            slater_margin: None,
            dual_cap: None,
            dual_step: None,
            noise_level: None,
            restart_period: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMode {
    /// Randomized LP policy over the codebook.
    RandomizedLp,
    /// Best feasible deterministic arm, for comparison.
    BestFeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    pub mode: OracleMode,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self { mode: OracleMode::RandomizedLp }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub horizon: usize,
    pub seeds: Vec<u64>,
    pub algorithms: Vec<Algorithm>,
    pub output: PathBuf,
    pub env: EnvSection,
    pub kernel: KernelSection,
    pub bandit: BanditSection,
    pub oracle: OracleSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::Abrupt,
            horizon: 500,
            seeds: (1..=10).collect(),
            algorithms: vec![
                Algorithm::RestartUnknown,
                Algorithm::RestartKnown,
                Algorithm::NoRestart,
            ],
            output: PathBuf::from("out"),
            env: EnvSection::default(),
            kernel: KernelSection::default(),
            bandit: BanditSection::default(),
            oracle: OracleSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.horizon == 0 {
            return Err(CliError::Config("horizon must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(CliError::Config("need at least one seed".into()));
        }
        if self.algorithms.is_empty() {
            return Err(CliError::Config("need at least one algorithm".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for algo in &self.algorithms {
            if !seen.insert(algo.slug()) {
                return Err(CliError::Config(format!("duplicate algorithm {}", algo.slug())));
            }
        }
        Ok(())
    }

    /// Channel model for the abrupt/slow scenarios.
    pub fn channel_model(&self) -> ChannelModel {
        let drift = match self.scenario {
            Scenario::Abrupt => Drift::Abrupt { change_times: self.env.change_times.clone() },
            _ => Drift::Slow {
                ar_coefficient: self.env.ar_coefficient,
                innovation_std: self.env.innovation_std,
            },
        };
        ChannelModel {
            paths: self.env.paths,
            carrier_freq_hz: self.env.carrier_freq_ghz * 1e9,
            interferers: self.env.interferers,
            drift,
            xi_quantile: self.env.xi_quantile,
            noise_scale: self.env.noise_scale,
        }
    }

    /// Model for the synthetic scenario (slow weight drift).
    pub fn synthetic_model(&self) -> SyntheticModel {
        SyntheticModel {
            centers: self.env.centers,
            drift: Drift::Slow {
                ar_coefficient: self.env.ar_coefficient,
                innovation_std: self.env.innovation_std,
            },
            xi_quantile: self.env.xi_quantile,
            noise_scale: self.env.noise_scale,
        }
    }
}
