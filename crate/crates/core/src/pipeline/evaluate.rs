use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::agent::{stream, ActMode, Agent};
use super::checkpoint::load_checkpoint;
use super::collect::{build_registry, CollectedEpisode, Collector};
use crate::envsim::{LayoutRegistry, Weather};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub weather: String,
    pub layout: String,
    pub returns: Vec<f64>,
    pub mean: f64,
    /// Half-width of the normal-approximation 95% interval.
    pub ci95: f64,
}

/// Sample mean and `1.96 · s / √n`; the interval is zero for one sample.
pub fn mean_ci95(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * (var / n).sqrt())
}

/// Greedy-policy returns per weather. Every weather sees the same sequence
/// of episode seeds, so identical weathers give identical rows.
pub fn evaluate_agent(
    agent: &Agent,
    registry: Arc<LayoutRegistry>,
    layout: &str,
    weathers: &[Weather],
    episodes: usize,
    seed: u64,
) -> Result<Vec<EvalRow>> {
    if episodes == 0 {
        return Err(Error::argument("episodes per weather must be >= 1"));
    }
    let mut rows = Vec::with_capacity(weathers.len());
    for weather in weathers {
        weather.validate()?;
        let mut collector =
            Collector::new(agent, registry.clone(), layout, vec![weather.clone()], seed ^ stream::EVAL, 0, 1)?;
        let returns = (0..episodes)
            .map(|_| Ok(collector.run_episode(agent, ActMode::Greedy)?.episode_return))
            .collect::<Result<Vec<_>>>()?;
        let (mean, ci95) = mean_ci95(&returns);
        rows.push(EvalRow { weather: weather.name.clone(), layout: layout.to_string(), returns, mean, ci95 });
    }
    Ok(rows)
}

/// Greedy episodes kept in full, e.g. for dumping and inspection.
pub fn greedy_rollouts(
    agent: &Agent,
    registry: Arc<LayoutRegistry>,
    layout: &str,
    weather: &Weather,
    episodes: usize,
    seed: u64,
) -> Result<Vec<CollectedEpisode>> {
    let mut collector = Collector::new(agent, registry, layout, vec![weather.clone()], seed ^ stream::EVAL, 0, 1)?;
    (0..episodes).map(|_| collector.run_episode(agent, ActMode::Greedy)).collect()
}

/// Loads a checkpoint and evaluates it on its configured evaluation layout,
/// or on `layout` when given.
pub fn evaluate(
    checkpoint: &Path,
    weathers: &[Weather],
    episodes: usize,
    seed: u64,
    layout: Option<&str>,
) -> Result<Vec<EvalRow>> {
    let agent = load_checkpoint(checkpoint)?;
    let registry = build_registry(&agent.config.env)?;
    let layout = layout.unwrap_or(agent.config.eval_layout()).to_string();
    evaluate_agent(&agent, registry, &layout, weathers, episodes, seed)
}

#[derive(Deserialize)]
struct WeatherFile {
    #[serde(default)]
    weather: Vec<Weather>,
}

/// Reads `[[weather]]` tables from a TOML file.
pub fn load_weathers(path: &Path) -> Result<Vec<Weather>> {
    let text = std::fs::read_to_string(path)?;
    let file: WeatherFile = toml::from_str(&text).map_err(|e| Error::config(e.to_string()))?;
    if file.weather.is_empty() {
        return Err(Error::config(format!("{} defines no [[weather]] entries", path.display())));
    }
    for w in &file.weather {
        w.validate()?;
    }
    Ok(file.weather)
}
