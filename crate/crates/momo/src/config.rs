//! Run configuration: presets, TOML files and flag overrides.
//!
//! Resolution order is preset defaults, then the config file, then flags.
//! The resolved value is what gets echoed into every run directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use momo_core::agent::AgentConfig;
use momo_core::dynamics::DynamicsConfig;
use momo_core::envtoy::{PointMassConfig, Quality};
use momo_core::morse::MorseConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Didactic,
    Pointmass,
}

impl FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "didactic" => Ok(Task::Didactic),
            "pointmass" => Ok(Task::Pointmass),
            other => Err(format!("unknown task `{other}` (expected didactic or pointmass)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Network sizes and step counts of the published hyperparameter tables.
    Paper,
    /// Small networks and short runs that finish in minutes on a laptop.
    Desk,
}

impl FromStr for Preset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(format!("unknown preset `{other}` (expected paper or desk)")),
        }
    }
}

/// How generated datasets are built when no dataset file is given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub quality: Quality,
    /// Transitions in a point-mass dataset; the didactic set has a fixed size.
    pub size: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            quality: Quality::Mixed,
            size: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: Task,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub data: DataConfig,
    pub pointmass: PointMassConfig,
    pub morse: MorseConfig,
    pub dynamics: DynamicsConfig,
    pub agent: AgentConfig,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Paper => Self {
                task: Task::Pointmass,
                seed: 0,
                dataset: None,
                out: None,
                data: DataConfig::default(),
                pointmass: PointMassConfig::default(),
                morse: MorseConfig::default(),
                dynamics: DynamicsConfig::default(),
                agent: AgentConfig::default(),
            },
            Preset::Desk => Self {
                morse: MorseConfig::desk(),
                dynamics: DynamicsConfig::desk(),
                agent: AgentConfig::desk(),
                ..Self::preset(Preset::Paper)
            },
        }
    }

    /// Preset defaults for a task. The didactic task uses the small Morse
    /// net of the two-state illustration (two 64-unit layers).
    pub fn preset_for(preset: Preset, task: Task) -> Self {
        let mut c = Self::preset(preset);
        c.task = task;
        if task == Task::Didactic {
            c.morse = match preset {
                Preset::Paper => MorseConfig {
                    hidden: 64,
                    depth: 2,
                    ..MorseConfig::default()
                },
                Preset::Desk => MorseConfig::didactic(),
            };
        }
        c
    }

    /// Overlays a TOML document on this config. Tables merge key by key;
    /// unknown keys are rejected.
    pub fn merge_toml(&self, text: &str) -> Result<Self, String> {
        let overlay: toml::Table = text.parse().map_err(|e: toml::de::Error| e.to_string())?;
        let mut base = toml::Table::try_from(self).map_err(|e| e.to_string())?;
        merge(&mut base, overlay);
        toml::Value::Table(base).try_into().map_err(|e: toml::de::Error| e.to_string())
    }

    pub fn merge_file(&self, path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        self.merge_toml(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))
    }

    /// Morse and agent λ must agree; the Morse value wins when they differ.
    pub fn sync_lambda(&mut self) {
        self.agent.lambda = self.morse.lambda;
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }

    pub fn validate(&self) -> Result<(), String> {
        self.morse.validate().map_err(|e| format!("morse: {e}"))?;
        self.dynamics.validate().map_err(|e| format!("dynamics: {e}"))?;
        self.agent.validate().map_err(|e| format!("agent: {e}"))?;
        if self.data.size == 0 {
            return Err("data.size must be at least 1".into());
        }
        Ok(())
    }
}

/// The top-level `task` key of a config file, if it sets one.
pub fn peek_task(text: &str) -> Result<Option<Task>, String> {
    let t: toml::Table = text.parse().map_err(|e: toml::de::Error| e.to_string())?;
    match t.get("task") {
        None => Ok(None),
        Some(toml::Value::String(s)) => s.parse().map(Some),
        Some(other) => Err(format!("task must be a string, got {other}")),
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
