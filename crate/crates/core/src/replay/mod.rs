//! Episode storage split into common, out-lane and collision buckets.
//!
//! Every episode lands in the common bucket; episodes ending off the road or
//! in a crash also contribute a copy of their last `2·L` steps to the
//! matching corner bucket. Batches draw sequences from the buckets in turn.

mod buffer;
mod dump;

pub use buffer::{
    BucketKind, BucketStats, BufferStats, Episode, EpisodeMeta, MultiSourceBuffer, ReplayConfig, Sequence,
    SequenceBatch, TransitionRecord,
};
pub use dump::{read_episode, read_episode_from, write_episode, write_episode_to};
