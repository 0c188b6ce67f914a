//! The TOML run configuration shared by every command.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, RewardSpec};
use crate::error::{Error, Result};
use crate::eval::EvalOptions;
use crate::grid::GridGeometry;
use crate::learner::LearnerConfig;
use crate::motion::LaneChangeRule;
use crate::oracle::DEFAULT_STATE_CAP;
use crate::perception::{AutoReveal, ScenarioId, ScenarioSpec};

/// Scenario selection. Groups and reveal rule default to the standard ones
/// for the id and geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub id: ScenarioId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_groups: Option<Vec<Vec<usize>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auto_reveal: Option<AutoReveal>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub v_max: u32,
    pub lane_change: LaneChangeRule,
    pub train_column_exclusion: bool,
    pub eval_column_exclusion: bool,
    /// Fixed density for the oracle.
    pub p_occupied: f64,
    pub seed: u64,
}

impl Default for EnvSection {
    fn default() -> Self {
        Self {
            v_max: 2,
            lane_change: LaneChangeRule::default(),
            train_column_exclusion: true,
            eval_column_exclusion: true,
            p_occupied: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub episodes: u64,
    pub steps: u64,
    pub densities: Vec<f64>,
    pub seed: u64,
    pub workers: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { episodes: 5000, steps: 100, densities: vec![0.0, 0.2, 0.5, 0.8], seed: 0, workers: 1 }
    }
}

impl EvalSection {
    pub fn options(&self) -> EvalOptions {
        EvalOptions { episodes: self.episodes, steps: self.steps, seed: self.seed, workers: self.workers }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    pub tol: f64,
    pub state_cap: usize,
    /// Minimum visit count for a pair to enter the comparison.
    pub n_min: u32,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self { tol: 1e-9, state_cap: DEFAULT_STATE_CAP, n_min: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub geometry: GridGeometry,
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub reward: RewardSpec,
    #[serde(default)]
    pub env: EnvSection,
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub oracle: OracleSection,
}

impl RunConfig {
    /// Evaluation-grid defaults for `id`.
    pub fn standard(id: ScenarioId) -> Self {
        Self {
            geometry: GridGeometry::standard(),
            scenario: ScenarioSection { id, query_groups: None, auto_reveal: None },
            reward: RewardSpec::default(),
            env: EnvSection::default(),
            learner: LearnerConfig::default(),
            eval: EvalSection::default(),
            oracle: OracleSection::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.env_config(true)?.validate()?;
        self.learner.validate()?;
        if self.eval.densities.iter().any(|p| !(0.0..1.0).contains(p)) {
            return Err(Error::InvalidConfig("densities must lie in [0,1)".into()));
        }
        if self.oracle.tol.is_nan() || self.oracle.tol <= 0.0 {
            return Err(Error::InvalidConfig("oracle tol must be positive".into()));
        }
        Ok(())
    }

    /// Switches to another scenario, dropping any custom groups or reveal rule.
    pub fn with_scenario(mut self, id: ScenarioId) -> Self {
        if self.scenario.id != id {
            self.scenario = ScenarioSection { id, query_groups: None, auto_reveal: None };
        }
        self
    }

    pub fn scenario_spec(&self) -> ScenarioSpec {
        let standard = ScenarioSpec::standard(self.scenario.id, self.geometry);
        ScenarioSpec {
            id: self.scenario.id,
            query_groups: self.scenario.query_groups.clone().unwrap_or(standard.query_groups),
            auto_reveal: self.scenario.auto_reveal.unwrap_or(standard.auto_reveal),
        }
    }

    /// Environment for training (`train = true`) or evaluation, at the
    /// configured fixed density.
    pub fn env_config(&self, train: bool) -> Result<EnvConfig> {
        let cfg = EnvConfig {
            geometry: self.geometry,
            scenario: self.scenario_spec(),
            reward: self.reward,
            p_occupied: self.env.p_occupied,
            column_exclusion: if train { self.env.train_column_exclusion } else { self.env.eval_column_exclusion },
            v_max: self.env.v_max,
            lane_change: self.env.lane_change,
            seed: self.env.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
