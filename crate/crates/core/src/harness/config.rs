use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::advantage::AdvantageConfig;
use crate::env::EnvConfig;
use crate::harness::HarnessError;
use crate::nn::NnConfig;
use crate::phasic::{Hyperparameters, PhasicConfig};
use crate::rollout::RolloutConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub seeds: Vec<u64>,
    /// Run directory name; defaults to the variant name.
    pub label: Option<String>,
    /// Run directory; relative paths resolve against the output root.
    pub output_dir: Option<PathBuf>,
    /// Checkpoint after every this many phases; 0 keeps only divergence dumps.
    pub checkpoint_every: u64,
    /// Iterations averaged into the reported final return.
    pub final_window: usize,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0],
            label: None,
            output_dir: None,
            checkpoint_every: 0,
            final_window: 10,
        }
    }
}

/// A full experiment: hyperparameters plus run bookkeeping. One TOML table
/// per section; unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub nn: NnConfig,
    pub advantage: AdvantageConfig,
    pub rollout: RolloutConfig,
    pub phasic: PhasicConfig,
    pub harness: HarnessConfig,
}

impl ExperimentConfig {
    pub fn hyperparameters(&self) -> Hyperparameters {
        Hyperparameters {
            env: self.env.clone(),
            nn: self.nn.clone(),
            advantage: self.advantage.clone(),
            rollout: self.rollout.clone(),
            phasic: self.phasic.clone(),
        }
    }

    pub fn set_hyperparameters(&mut self, hp: Hyperparameters) {
        self.env = hp.env;
        self.nn = hp.nn;
        self.advantage = hp.advantage;
        self.rollout = hp.rollout;
        self.phasic = hp.phasic;
    }

    pub fn label(&self) -> String {
        self.harness
            .label
            .clone()
            .unwrap_or_else(|| self.phasic.variant.to_string())
    }

    /// Parses TOML text, applies `section.key=value` overrides, and validates.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self, HarnessError> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text, overrides)
            .map_err(|e| HarnessError::Config(format!("{}: {}", path.display(), e.message())))
    }

    /// Defaults plus overrides.
    pub fn from_overrides(overrides: &[String]) -> Result<Self, HarnessError> {
        Self::from_toml_str("", overrides)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.hyperparameters()
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.harness.seeds.is_empty() {
            return Err(HarnessError::Config("harness.seeds: must list at least one seed".into()));
        }
        let mut seen = self.harness.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.harness.seeds.len() {
            return Err(HarnessError::Config("harness.seeds: duplicate seed".into()));
        }
        if self.harness.final_window == 0 {
            return Err(HarnessError::Config("harness.final_window: must be at least 1".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), HarnessError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| HarnessError::Config(format!("override `{spec}` is not of the form section.key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(HarnessError::Config(format!("override `{spec}` has an empty key segment")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| HarnessError::Config(format!("override `{spec}`: `{p}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
