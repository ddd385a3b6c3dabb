use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::behavior::BehaviorStats;
use crate::replay::BufferStats;
use crate::worldmodel::LossBreakdown;
use crate::{Error, Result};

/// One line of the metrics stream. `global_step` counts gradient updates and
/// never decreases along a stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricsRecord {
    /// One model update plus one behavior update.
    Update {
        global_step: u64,
        env_step: u64,
        loss: LossBreakdown,
        behavior: BehaviorStats,
        model_grad_norm: f64,
    },
    Episode {
        global_step: u64,
        env_step: u64,
        episode_id: u64,
        layout: String,
        weather: String,
        #[serde(rename = "return")]
        episode_return: f64,
        length: usize,
        termination: String,
        /// Terminations of all collected episodes so far.
        terminations: BTreeMap<String, u64>,
        buffer: BufferStats,
    },
    Eval {
        global_step: u64,
        env_step: u64,
        layout: String,
        weather: String,
        episodes: usize,
        mean_return: f64,
        ci95: f64,
    },
}

impl MetricsRecord {
    pub fn global_step(&self) -> u64 {
        match self {
            MetricsRecord::Update { global_step, .. }
            | MetricsRecord::Episode { global_step, .. }
            | MetricsRecord::Eval { global_step, .. } => *global_step,
        }
    }

    pub fn env_step(&self) -> u64 {
        match self {
            MetricsRecord::Update { env_step, .. }
            | MetricsRecord::Episode { env_step, .. }
            | MetricsRecord::Eval { env_step, .. } => *env_step,
        }
    }
}

/// Append-only JSON-lines writer enforcing non-decreasing `global_step`.
pub struct MetricsWriter {
    out: BufWriter<File>,
    last_step: u64,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self { out: BufWriter::new(File::create(path)?), last_step: 0 })
    }

    pub fn write(&mut self, record: &MetricsRecord) -> Result<()> {
        if record.global_step() < self.last_step {
            return Err(Error::Protocol(format!(
                "metrics step went backwards: {} after {}",
                record.global_step(),
                self.last_step
            )));
        }
        self.last_step = record.global_step();
        serde_json::to_writer(&mut self.out, record).map_err(|e| Error::format(e.to_string()))?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        Ok(self.out.flush()?)
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::format(format!("metrics line {}: {e}", i + 1)))?);
    }
    Ok(out)
}
