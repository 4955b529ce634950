//! Scenario configuration files.

use std::path::{Path, PathBuf};

use sensmpc::mpc::Warmstart;
use serde::{Deserialize, Serialize};

use crate::scenario::ScenarioKind;
use crate::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Contents of a scenario JSON file. Unknown fields are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema: u32,
    pub scenario: String,
    #[serde(default = "default_modes")]
    pub modes: Vec<String>,
    #[serde(rename = "N")]
    pub horizon: usize,
    pub x0: Vec<f64>,
    pub sim_steps: usize,
    pub epsilon: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_modes() -> Vec<String> {
    vec![Warmstart::Semiderivative.name().to_string()]
}

impl ScenarioConfig {
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(text).map_err(|e| CliError::Config {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate().map_err(|message| CliError::Config {
            path: origin.to_path_buf(),
            message,
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text, path)
    }

    pub fn kind(&self) -> ScenarioKind {
        self.scenario.parse().expect("validated on load")
    }

    pub fn warmstarts(&self) -> Vec<Warmstart> {
        self.modes
            .iter()
            .map(|m| m.parse().expect("validated on load"))
            .collect()
    }

    /// Field-level checks beyond what the JSON schema expresses.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.schema != SCHEMA_VERSION {
            return Err(format!(
                "field `schema`: unsupported version {} (expected {SCHEMA_VERSION})",
                self.schema
            ));
        }
        let kind: ScenarioKind = self
            .scenario
            .parse()
            .map_err(|e| format!("field `scenario`: {e}"))?;
        if self.modes.is_empty() {
            return Err("field `modes`: at least one mode is required".into());
        }
        for (i, m) in self.modes.iter().enumerate() {
            m.parse::<Warmstart>()
                .map_err(|e| format!("field `modes`: {e}"))?;
            if self.modes[..i].contains(m) {
                return Err(format!("field `modes`: `{m}` listed twice"));
            }
        }
        if self.horizon < kind.min_horizon() {
            return Err(format!(
                "field `N`: must be at least {} (got {})",
                kind.min_horizon(),
                self.horizon
            ));
        }
        if self.x0.len() != kind.state_dim() {
            return Err(format!(
                "field `x0`: scenario `{}` has {} states (got {})",
                self.scenario,
                kind.state_dim(),
                self.x0.len()
            ));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err("field `x0`: entries must be finite".into());
        }
        if self.sim_steps == 0 {
            return Err("field `sim_steps`: must be at least 1".into());
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(format!(
                "field `epsilon`: must be positive (got {})",
                self.epsilon
            ));
        }
        Ok(())
    }
}
