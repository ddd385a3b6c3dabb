//! Training, evaluation and inspection of complete agents.
//!
//! A run alternates short collection rounds with paired world-model and
//! behavior updates. Metrics stream to JSON lines; checkpoints are
//! safetensors files carrying the run config in their metadata.

mod agent;
mod checkpoint;
mod collect;
mod config;
mod evaluate;
mod inspect;
mod metrics;
mod plot;
mod train;

pub use agent::{ActMode, Agent, Controller};
pub use checkpoint::{load_checkpoint, load_checkpoint_into, save_checkpoint, CheckpointContents};
pub use collect::{build_registry, CollectedEpisode, Collector};
pub use config::{EnvSection, RunConfig, ScheduleConfig, Variant, OVERRIDE_VAR};
pub use evaluate::{evaluate, evaluate_agent, greedy_rollouts, load_weathers, mean_ci95, EvalRow};
pub use inspect::{inspect, inspect_agent, mask_accuracy, pixel_accuracy, reconstruct, InspectReport, Reconstruction};
pub use metrics::{read_metrics, MetricsRecord, MetricsWriter};
pub use plot::{line_chart, plot};
pub use train::{
    train, TrainSummary, BEST_CHECKPOINT, DIAGNOSTIC_CHECKPOINT, FINAL_CHECKPOINT, INIT_CHECKPOINT, METRICS_FILE,
};
