//! Experiment configuration: one JSON document, fail-closed (unknown keys
//! are rejected so sweep typos cannot pass silently). Every field has a
//! default; the effective config is echoed into the report so any run can be
//! reproduced from its outputs alone.

use std::path::Path;

use eddy_core::guidance::{EstimatorMode, GuidanceConfig, NeighborMode};
use eddy_core::sampler::{DynamicsMode, Method, RunConfig};
use eddy_core::targets::{GaussianMixture, VpSchedule};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub target: TargetSection,
    pub schedule: ScheduleSection,
    pub dynamics: DynamicsKind,
    /// Euler steps per trajectory.
    pub steps: usize,
    /// Particles per batch.
    pub particles: usize,
    /// Batches per arm; also the pooled sample size per arm (one particle
    /// is pooled from each batch).
    pub batches: usize,
    pub guidance: GuidanceSection,
    /// Guidance weights for the marginal-preserving arms.
    pub eddy_weights: Vec<f64>,
    /// Guidance weights for the plain-repulsion baseline arms.
    pub pg_weights: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 20240901,
            target: TargetSection::default(),
            schedule: ScheduleSection::default(),
            dynamics: DynamicsKind::VpDdpm,
            steps: eddy_core::sampler::DEFAULT_STEPS,
            particles: eddy_core::sampler::DEFAULT_PARTICLES,
            batches: 2000,
            guidance: GuidanceSection::default(),
            eddy_weights: vec![0.5, 1.75, 3.0],
            pg_weights: vec![1.0, 2.0, 4.0],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TargetSection {
    /// Mixture components, equally weighted on a circle.
    pub modes: usize,
    pub radius: f64,
    pub variance: f64,
}

impl Default for TargetSection {
    fn default() -> Self {
        Self {
            modes: 5,
            radius: 5.0,
            variance: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            beta_min: eddy_core::targets::DEFAULT_BETA_MIN,
            beta_max: eddy_core::targets::DEFAULT_BETA_MAX,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsKind {
    VpDdpm,
    OtFm,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceSection {
    pub gamma: f64,
    pub stop_ratio: f64,
    pub neighbor_mode: NeighborKind,
    pub estimator: EstimatorSection,
}

impl Default for GuidanceSection {
    fn default() -> Self {
        Self {
            gamma: eddy_core::guidance::DEFAULT_GAMMA,
            stop_ratio: eddy_core::guidance::DEFAULT_STOP_RATIO,
            neighbor_mode: NeighborKind::SigmaScore,
            estimator: EstimatorSection::ExactRbf,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum NeighborKind {
    Drift,
    SigmaScore,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimatorSection {
    ExactRbf,
    Approximate { epsilon: f64, probes: usize },
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("cannot parse {}: {e}", path.display())))?;
        config.validated()
    }

    /// Builds the domain objects once so bad values fail at load time with
    /// a config error rather than mid-run.
    pub fn validated(self) -> Result<Self, CliError> {
        self.target()?;
        self.schedule()?;
        self.run_config(Method::Eddy, 1.0)
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        for &w in self.eddy_weights.iter().chain(&self.pg_weights) {
            if !(w.is_finite() && w >= 0.0) {
                return Err(CliError::Config(format!("invalid guidance weight {w}")));
            }
        }
        Ok(self)
    }

    pub fn target(&self) -> Result<GaussianMixture<f64>, CliError> {
        GaussianMixture::ring(self.target.modes, self.target.radius, self.target.variance)
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn schedule(&self) -> Result<VpSchedule<f64>, CliError> {
        VpSchedule::new(self.schedule.beta_min, self.schedule.beta_max)
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn run_config(&self, method: Method, weight: f64) -> RunConfig<f64> {
        RunConfig {
            guidance: GuidanceConfig {
                weight,
                gamma: self.guidance.gamma,
                stop_ratio: self.guidance.stop_ratio,
                neighbor_mode: match self.guidance.neighbor_mode {
                    NeighborKind::Drift => NeighborMode::Drift,
                    NeighborKind::SigmaScore => NeighborMode::SigmaScore,
                },
                estimator: match self.guidance.estimator {
                    EstimatorSection::ExactRbf => EstimatorMode::ExactRbf,
                    EstimatorSection::Approximate { epsilon, probes } => {
                        EstimatorMode::Approximate { epsilon, probes }
                    }
                },
            },
            method,
            steps: self.steps,
            particles: self.particles,
            dynamics: match self.dynamics {
                DynamicsKind::VpDdpm => DynamicsMode::VpDdpm,
                DynamicsKind::OtFm => DynamicsMode::OtFm,
            },
            seed: self.seed,
        }
    }
}
