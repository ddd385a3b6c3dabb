use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::behavior::BehaviorConfig;
use crate::envsim::{EnvConfig, Weather};
use crate::replay::ReplayConfig;
use crate::worldmodel::{Precision, WorldModelConfig};
use crate::{Error, Result};

/// Environment variable holding comma-separated `key.path=value` overrides.
pub const OVERRIDE_VAR: &str = "SEM2_SET";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Semantic filter with multi-source replay.
    #[default]
    Sem2,
    /// No filter and no mask head; heads read `[h, z]` directly.
    NoFilter,
    /// Semantic filter, corner buckets disabled.
    NoMultisource,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Sem2, Variant::NoFilter, Variant::NoMultisource];

    pub fn uses_filter(self) -> bool {
        self != Variant::NoFilter
    }

    pub fn uses_multisource(self) -> bool {
        self != Variant::NoMultisource
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Sem2 => "sem2",
            Variant::NoFilter => "no_filter",
            Variant::NoMultisource => "no_multisource",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown variant '{s}' (expected sem2, no_filter or no_multisource)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvSection {
    /// Layout id used for training episodes.
    pub layout: String,
    /// Layout used for periodic evaluation; defaults to `layout`.
    pub eval_layout: Option<String>,
    /// Extra layout definitions merged into the built-in registry.
    pub layouts_file: Option<PathBuf>,
    /// Weathers cycled through episode by episode during collection.
    pub train_weathers: Vec<Weather>,
    #[serde(flatten)]
    pub sim: EnvConfig,
}

impl Default for EnvSection {
    fn default() -> Self {
        Self {
            layout: "loop".into(),
            eval_layout: None,
            layouts_file: None,
            train_weathers: vec![Weather::mild()],
            sim: EnvConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub seed: u64,
    pub total_env_steps: u64,
    /// Random-policy episodes collected before the first update.
    pub prefill_episodes: usize,
    /// Environment steps per model update and behavior update.
    pub env_steps_per_update: u64,
    /// Environment steps between evaluations; `0` disables them.
    pub eval_every: u64,
    pub eval_episodes: usize,
    /// Pre-squash exploration noise, annealed linearly to zero over the run.
    pub exploration_std: f64,
    /// Parallel collection workers; `1` is the reproducible default.
    pub workers: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            total_env_steps: 100_000,
            prefill_episodes: 5,
            env_steps_per_update: 5,
            eval_every: 2_000,
            eval_episodes: 10,
            exploration_std: 0.3,
            workers: 1,
        }
    }
}

/// Full description of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub variant: Variant,
    pub env: EnvSection,
    pub model: WorldModelConfig,
    pub replay: ReplayConfig,
    pub behavior: BehaviorConfig,
    pub schedule: ScheduleConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Sem2,
            env: EnvSection::default(),
            model: WorldModelConfig::default(),
            replay: ReplayConfig::default(),
            behavior: BehaviorConfig::default(),
            schedule: ScheduleConfig::default(),
        }
    }
}

impl RunConfig {
    /// Miniature run that trains in minutes on one CPU core: 16×16 rasters,
    /// small networks, short episodes and raised learning rates.
    pub fn tiny() -> Self {
        Self {
            variant: Variant::Sem2,
            env: EnvSection {
                layout: "crowded".into(),
                sim: EnvConfig { raster: 16, view_extent: 16.0, episode_cap: 150, ..EnvConfig::default() },
                ..EnvSection::default()
            },
            model: WorldModelConfig {
                image_size: 16,
                deter: 32,
                groups: 4,
                classes: 4,
                filter_dim: 16,
                hidden: 32,
                cnn_depth: 4,
                lr: 1e-3,
                precision: Precision::F32,
                ..WorldModelConfig::default()
            },
            replay: ReplayConfig { batch_size: 8, sequence_length: 8, ..ReplayConfig::default() },
            behavior: BehaviorConfig { hidden: 32, ..BehaviorConfig::default() },
            schedule: ScheduleConfig {
                total_env_steps: 2_000,
                eval_every: 1_000,
                eval_episodes: 3,
                ..ScheduleConfig::default()
            },
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    /// Applies `key.path=value` assignments. Values are parsed as TOML
    /// literals, falling back to plain strings.
    pub fn with_overrides<S: AsRef<str>>(&self, assignments: &[S]) -> Result<Self> {
        if assignments.is_empty() {
            return Ok(self.clone());
        }
        let mut doc = toml::Value::try_from(self).map_err(|e| Error::config(e.to_string()))?;
        for a in assignments {
            let a = a.as_ref();
            let (key, raw) = a
                .split_once('=')
                .ok_or_else(|| Error::config(format!("override '{a}' is not of the form key.path=value")))?;
            let value = parse_literal(raw.trim());
            set_path(&mut doc, key.trim(), value)?;
        }
        let cfg: RunConfig = doc.try_into().map_err(|e: toml::de::Error| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies overrides from [`OVERRIDE_VAR`] if it is set.
    pub fn with_env_overrides(&self) -> Result<Self> {
        match std::env::var(OVERRIDE_VAR) {
            Ok(v) => {
                let parts: Vec<&str> = v.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
                self.with_overrides(&parts)
            }
            Err(_) => Ok(self.clone()),
        }
    }

    pub fn eval_layout(&self) -> &str {
        self.env.eval_layout.as_deref().unwrap_or(&self.env.layout)
    }

    pub fn validate(&self) -> Result<()> {
        self.env.sim.validate()?;
        self.model.validate()?;
        self.replay.validate()?;
        self.behavior.validate()?;
        if self.model.image_size != self.env.sim.raster {
            return Err(Error::config(format!(
                "model.image_size ({}) must equal env.raster ({})",
                self.model.image_size, self.env.sim.raster
            )));
        }
        if self.env.train_weathers.is_empty() {
            return Err(Error::config("env.train_weathers must list at least one weather"));
        }
        for w in &self.env.train_weathers {
            w.validate()?;
        }
        let s = &self.schedule;
        if s.env_steps_per_update == 0 || s.workers == 0 || s.eval_episodes == 0 {
            return Err(Error::config(
                "schedule.env_steps_per_update, schedule.workers and schedule.eval_episodes must be >= 1",
            ));
        }
        if !(s.exploration_std >= 0.0) {
            return Err(Error::config("schedule.exploration_std must be >= 0"));
        }
        Ok(())
    }

    /// Dotted key paths whose values differ between two configs.
    pub fn diff(&self, other: &RunConfig) -> Vec<String> {
        let a = serde_json::to_value(self).unwrap_or_default();
        let b = serde_json::to_value(other).unwrap_or_default();
        let mut out = Vec::new();
        diff_values("", &a, &b, &mut out);
        out
    }
}

fn diff_values(prefix: &str, a: &serde_json::Value, b: &serde_json::Value, out: &mut Vec<String>) {
    use serde_json::Value;
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            let keys: std::collections::BTreeSet<&String> = x.keys().chain(y.keys()).collect();
            for k in keys {
                let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                match (x.get(k), y.get(k)) {
                    (Some(va), Some(vb)) => diff_values(&path, va, vb, out),
                    _ => out.push(path),
                }
            }
        }
        _ if a != b => out.push(prefix.to_string()),
        _ => {}
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    #[derive(Deserialize)]
    struct Wrap {
        v: toml::Value,
    }
    match toml::from_str::<Wrap>(&format!("v = {raw}")) {
        Ok(w) => w.v,
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(doc: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("override key '{key}' descends into a non-table")))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        cur = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
    }
    Err(Error::config("empty override key"))
}
