use std::collections::VecDeque;
use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dump::write_episode;
use crate::envsim::{Action, Observation, SemanticMask, Termination};
use crate::{Error, Result};

/// One environment step as stored for training.
///
/// `action` is the action that led into this step (zero for the reset
/// record) and `reward` the reward received on arrival, so the pair
/// `(action, observation)` lines up as `(a_{t-1}, o_t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionRecord {
    pub observation: Observation,
    pub mask: SemanticMask,
    pub action: Action,
    pub reward: f64,
    pub termination: Termination,
    pub episode_id: u64,
    pub step_index: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub episode_id: u64,
    pub termination: Termination,
    pub layout: String,
    pub seed: u64,
}

/// A validated, immutable run of consecutive records from one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    meta: EpisodeMeta,
    records: Vec<TransitionRecord>,
}

impl Episode {
    /// Checks that records share one episode id, have consecutive step
    /// indices and that only the last may be terminal.
    pub fn new(layout: impl Into<String>, seed: u64, records: Vec<TransitionRecord>) -> Result<Self> {
        let first = records.first().ok_or_else(|| Error::argument("episode has no records"))?;
        let episode_id = first.episode_id;
        for (i, pair) in records.windows(2).enumerate() {
            if pair[1].episode_id != episode_id {
                return Err(Error::argument(format!("record {} belongs to another episode", i + 1)));
            }
            if Some(pair[1].step_index) != pair[0].step_index.checked_add(1) {
                return Err(Error::argument(format!("step_index not consecutive at record {}", i + 1)));
            }
            if pair[0].termination.is_terminal() {
                return Err(Error::argument(format!("terminal record {i} is not the last")));
            }
        }
        let termination = records.last().map(|r| r.termination).unwrap_or(Termination::None);
        Ok(Self { meta: EpisodeMeta { episode_id, termination, layout: layout.into(), seed }, records })
    }

    pub fn meta(&self) -> &EpisodeMeta {
        &self.meta
    }

    pub fn records(&self) -> &[TransitionRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn termination(&self) -> Termination {
        self.meta.termination
    }

    /// Copy of the last `n` records (all of them if the episode is shorter).
    pub fn tail(&self, n: usize) -> Episode {
        let start = self.records.len().saturating_sub(n);
        Episode { meta: self.meta.clone(), records: self.records[start..].to_vec() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BucketKind {
    Common,
    OutLane,
    Collision,
}

impl BucketKind {
    /// Round-robin order.
    pub const ALL: [BucketKind; 3] = [BucketKind::Common, BucketKind::OutLane, BucketKind::Collision];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BucketKind::Common => "common",
            BucketKind::OutLane => "out_lane",
            BucketKind::Collision => "collision",
        }
    }

    /// Corner bucket receiving the tail of an episode with this ending.
    pub fn for_termination(t: Termination) -> Option<BucketKind> {
        match t {
            Termination::OutLane => Some(BucketKind::OutLane),
            Termination::Collision => Some(BucketKind::Collision),
            Termination::None | Termination::Timeout => None,
        }
    }
}

impl fmt::Display for BucketKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReplayConfig {
    /// Transition capacity of the common bucket.
    pub common_capacity: usize,
    /// Transition capacity of each corner bucket.
    pub corner_capacity: usize,
    pub batch_size: usize,
    pub sequence_length: usize,
    /// Directory receiving a dump of every added episode.
    pub spill_dir: Option<PathBuf>,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            common_capacity: 100_000,
            corner_capacity: 20_000,
            batch_size: 16,
            sequence_length: 16,
            spill_dir: None,
        }
    }
}

impl ReplayConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("common_capacity", self.common_capacity),
            ("corner_capacity", self.corner_capacity),
            ("batch_size", self.batch_size),
            ("sequence_length", self.sequence_length),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::config(format!("replay.{name} must be >= 1")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketStats {
    pub episodes: usize,
    pub transitions: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferStats {
    pub common: BucketStats,
    pub out_lane: BucketStats,
    pub collision: BucketStats,
}

impl BufferStats {
    pub fn get(&self, kind: BucketKind) -> BucketStats {
        match kind {
            BucketKind::Common => self.common,
            BucketKind::OutLane => self.out_lane,
            BucketKind::Collision => self.collision,
        }
    }
}

#[derive(Debug)]
struct Bucket {
    episodes: VecDeque<Arc<Episode>>,
    transitions: usize,
    capacity: usize,
}

impl Bucket {
    fn new(capacity: usize) -> Self {
        Self { episodes: VecDeque::new(), transitions: 0, capacity }
    }

    fn push(&mut self, ep: Arc<Episode>) {
        self.transitions += ep.len();
        self.episodes.push_back(ep);
        while self.transitions > self.capacity {
            let Some(old) = self.episodes.pop_front() else { break };
            self.transitions -= old.len();
        }
    }

    fn samplable(&self, length: usize) -> impl Iterator<Item = &Arc<Episode>> {
        self.episodes.iter().filter(move |e| e.len() >= length)
    }
}

/// `length` consecutive records of one stored episode.
#[derive(Clone, Debug)]
pub struct Sequence {
    pub bucket: BucketKind,
    episode: Arc<Episode>,
    start: usize,
    length: usize,
}

impl Sequence {
    pub fn records(&self) -> &[TransitionRecord] {
        &self.episode.records[self.start..self.start + self.length]
    }

    pub fn episode(&self) -> &Episode {
        &self.episode
    }

    pub fn start(&self) -> usize {
        self.start
    }
}

#[derive(Clone, Debug)]
pub struct SequenceBatch {
    pub sequences: Vec<Sequence>,
    pub length: usize,
}

impl SequenceBatch {
    pub fn batch_size(&self) -> usize {
        self.sequences.len()
    }

    /// Number of sequences drawn from each bucket, in [`BucketKind::ALL`] order.
    pub fn bucket_counts(&self) -> [usize; 3] {
        let mut out = [0; 3];
        for s in &self.sequences {
            out[s.bucket.index()] += 1;
        }
        out
    }
}

/// Common and corner-case episode stores with a round-robin sequence sampler.
#[derive(Debug)]
pub struct MultiSourceBuffer {
    buckets: [Bucket; 3],
    corner_length: usize,
    multisource: bool,
    cursor: usize,
    spill_dir: Option<PathBuf>,
}

impl MultiSourceBuffer {
    /// Corner buckets receive the last `2 * sequence_length` steps of
    /// out-lane and collision episodes. With `multisource = false` they stay
    /// empty and every sequence comes from the common bucket.
    pub fn new(config: &ReplayConfig, multisource: bool) -> Result<Self> {
        config.validate()?;
        if let Some(dir) = &config.spill_dir {
            std::fs::create_dir_all(dir)?;
        }
        Ok(Self {
            buckets: [
                Bucket::new(config.common_capacity),
                Bucket::new(config.corner_capacity),
                Bucket::new(config.corner_capacity),
            ],
            corner_length: 2 * config.sequence_length,
            multisource,
            cursor: 0,
            spill_dir: config.spill_dir.clone(),
        })
    }

    pub fn is_multisource(&self) -> bool {
        self.multisource
    }

    pub fn add_episode(&mut self, episode: Episode) -> Result<()> {
        if let Some(dir) = &self.spill_dir {
            let path = dir.join(format!("episode_{:08}.sem2ep", episode.meta.episode_id));
            write_episode(&path, &episode)?;
        }
        let corner = BucketKind::for_termination(episode.termination()).filter(|_| self.multisource);
        let tail = corner.map(|k| (k, episode.tail(self.corner_length)));
        self.buckets[BucketKind::Common.index()].push(Arc::new(episode));
        if let Some((kind, tail)) = tail {
            self.buckets[kind.index()].push(Arc::new(tail));
        }
        Ok(())
    }

    pub fn stats(&self) -> BufferStats {
        let s = |k: BucketKind| {
            let b = &self.buckets[k.index()];
            BucketStats { episodes: b.episodes.len(), transitions: b.transitions }
        };
        BufferStats {
            common: s(BucketKind::Common),
            out_lane: s(BucketKind::OutLane),
            collision: s(BucketKind::Collision),
        }
    }

    /// Episodes currently held by one bucket, oldest first.
    pub fn episodes(&self, kind: BucketKind) -> impl Iterator<Item = &Episode> {
        self.buckets[kind.index()].episodes.iter().map(|e| e.as_ref())
    }

    /// Fills `batch` slots by cycling over the buckets, skipping any that
    /// hold no episode of at least `length` steps. The cursor persists across
    /// calls.
    pub fn sample_batch(&mut self, batch: usize, length: usize, seed: u64) -> Result<SequenceBatch> {
        if batch == 0 || length == 0 {
            return Err(Error::argument("batch size and sequence length must be >= 1"));
        }
        let available: Vec<Vec<Arc<Episode>>> =
            self.buckets.iter().map(|b| b.samplable(length).cloned().collect()).collect();
        if available.iter().all(|v| v.is_empty()) {
            return Err(Error::EmptyBuffer { length });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sequences = Vec::with_capacity(batch);
        while sequences.len() < batch {
            let k = self.cursor;
            self.cursor = (self.cursor + 1) % 3;
            let pool = &available[k];
            if pool.is_empty() {
                continue;
            }
            let episode = pool[rng.random_range(0..pool.len())].clone();
            let start = rng.random_range(0..=episode.len() - length);
            sequences.push(Sequence { bucket: BucketKind::ALL[k], episode, start, length });
        }
        Ok(SequenceBatch { sequences, length })
    }
}
