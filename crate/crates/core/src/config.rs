//! Experiment configuration: TOML sections mirroring the modules, named
//! presets, and `section.key=value` overrides.
//!
//! Resolution order is preset, then file, then overrides. Unknown keys and
//! type mismatches are rejected with the offending key in the message.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::AgentParams;
use crate::channel::{ChannelModel, ChannelTrace};
use crate::compression::{CompressionTable, SizeModel};
use crate::error::{Error, Result};
use crate::federation::FederationParams;
use crate::link::LinkParams;
use crate::reward::RewardParams;
use crate::state::FeatureScaling;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    pub seed: u64,
    pub n_vehicles: usize,
    pub episodes: u64,
    pub steps_per_episode: u64,
    /// Greedy episodes without learning after training.
    pub eval_episodes: u64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            name: "run".into(),
            seed: 1,
            n_vehicles: 5,
            episodes: 1000,
            steps_per_episode: 2400,
            eval_episodes: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceSection {
    /// External `time_s,vehicle_id,sinr_db` trace replayed in every episode
    /// instead of the synthetic generator.
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompressionSection {
    /// `c,q,time_ms,map` table replacing the built-in one.
    pub table_path: Option<PathBuf>,
    pub size_model: SizeModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessParams {
    /// Fraction of the final training episodes averaged into `final_reward`.
    pub final_fraction: f64,
    pub first_steps: usize,
    pub last_episodes: usize,
    /// Run the nine constant benchmarks to find the regret oracle.
    pub regret: bool,
    pub step_time_reps: u64,
}

impl Default for HarnessParams {
    fn default() -> Self {
        Self {
            final_fraction: 0.1,
            first_steps: 100,
            last_episodes: 30,
            regret: true,
            step_time_reps: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Write the per-step metrics CSV.
    pub metrics: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs"),
            metrics: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub link: LinkParams,
    pub channel: ChannelModel,
    pub traces: TraceSection,
    pub compression: CompressionSection,
    pub scaling: FeatureScaling,
    pub reward: RewardParams,
    pub agents: AgentParams,
    pub federation: FederationParams,
    pub harness: HarnessParams,
    pub output: OutputSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    /// Five vehicles, 100 episodes of 600 steps.
    Desk,
    /// Five vehicles, 1000 episodes of 2400 steps.
    Paper,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            _ => Err(Error::config("--preset", format!("unknown preset `{s}` (desk or paper)"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        })
    }
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        let mut c = Self::default();
        if preset == Preset::Desk {
            c.experiment.episodes = 100;
            c.experiment.steps_per_episode = 600;
        }
        c
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| toml_error("<config>", e))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<config>", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        for (key, v) in [
            ("experiment.n_vehicles", e.n_vehicles as u64),
            ("experiment.episodes", e.episodes),
            ("experiment.steps_per_episode", e.steps_per_episode),
        ] {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        self.link.validate()?;
        self.channel.validate()?;
        self.compression.size_model.validate()?;
        self.scaling.validate()?;
        self.agents.validate()?;
        if !(self.reward.penalty_scale > 0.0 && self.reward.penalty_scale.is_finite()) {
            return Err(Error::config("reward.penalty_scale", "must be positive"));
        }
        let h = &self.harness;
        if !(h.final_fraction > 0.0 && h.final_fraction <= 1.0) {
            return Err(Error::config("harness.final_fraction", "must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> u64 {
        self.experiment.episodes * self.experiment.steps_per_episode
    }

    /// Compression table from `compression.table_path`, or the built-in one.
    pub fn load_table(&self) -> Result<CompressionTable> {
        match &self.compression.table_path {
            Some(p) => CompressionTable::from_path(p),
            None => Ok(CompressionTable::default()),
        }
    }

    pub fn load_trace(&self) -> Result<Option<ChannelTrace>> {
        self.traces.path.as_deref().map(ChannelTrace::from_path).transpose()
    }

    /// Hex SHA-256 of the canonical JSON form of the resolved config.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(canonical.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Applies one `key=value` override. Bare keys resolve to the unique
    /// section that has them; values are TOML literals, with bare words
    /// taken as strings.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::config(assignment, "override must look like KEY=VALUE"))?;
        let key = key.trim();
        let mut tree = toml::Value::try_from(&*self).map_err(|e| Error::config(key, e.to_string()))?;
        let path = resolve_key(&tree, key)?;
        let value = parse_literal(raw.trim());
        let mut node = &mut tree;
        for part in &path[..path.len() - 1] {
            node = node
                .as_table_mut()
                .and_then(|t| t.get_mut(part.as_str()))
                .ok_or_else(|| Error::config(key, "unknown section"))?;
        }
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::config(key, "not a section"))?;
        table.insert(path.last().expect("non-empty path").clone(), value);
        let updated: Self = tree.try_into().map_err(|e| toml_error(key, e))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }
}

fn toml_error(key: &str, e: toml::de::Error) -> Error {
    Error::config(key, e.message().trim().to_string())
}

fn parse_literal(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn resolve_key(tree: &toml::Value, key: &str) -> Result<Vec<String>> {
    let parts: Vec<String> = key.split('.').map(str::to_string).collect();
    if parts.iter().any(String::is_empty) {
        return Err(Error::config(key, "empty key segment"));
    }
    if parts.len() > 1 {
        return Ok(parts);
    }
    let sections = tree.as_table().expect("config is a table");
    let owners: Vec<&String> = sections
        .iter()
        .filter(|(_, v)| v.as_table().is_some_and(|t| t.contains_key(key)))
        .map(|(k, _)| k)
        .collect();
    match owners.as_slice() {
        [one] => Ok(vec![(*one).clone(), key.to_string()]),
        [] => Err(Error::config(key, "unknown key")),
        _ => Err(Error::config(key, "ambiguous key; qualify it with its section")),
    }
}

fn merge(base: &mut toml::Value, top: toml::Value) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(existing) if existing.is_table() && v.is_table() => merge(existing, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) => *b = t,
    }
}

/// Preset defaults, overlaid by the file at `path` (if any), then by the
/// overrides in order.
pub fn parse_config(path: Option<&Path>, preset: Option<Preset>, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::preset(preset.unwrap_or(Preset::Paper));
    if let Some(path) = path {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: toml::Value = toml::from_str(&text).map_err(|e| toml_error(&path.display().to_string(), e))?;
        let mut tree = toml::Value::try_from(&config).map_err(|e| Error::config("<config>", e.to_string()))?;
        merge(&mut tree, file);
        config = tree
            .try_into()
            .map_err(|e| toml_error(&path.display().to_string(), e))?;
    }
    for o in overrides {
        config.apply_override(o)?;
    }
    config.validate()?;
    Ok(config)
}
