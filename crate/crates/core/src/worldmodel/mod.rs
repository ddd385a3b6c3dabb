//! Recurrent latent world model with a semantic filter.
//!
//! A GRU carries the deterministic state `h`; the stochastic state `z` is a
//! set of categorical variables sampled with straight-through gradients. The
//! filter compresses `(h, z)` into driving-relevant features from which the
//! mask and reward are decoded, while the observation is decoded from the
//! full state.

mod config;
mod loss;
mod model;
mod state;

pub use config::{Precision, WorldModelConfig};
pub use loss::{loss, train_step, LossBreakdown, LossOutput, TrainingBatch};
pub use model::{
    actions_to_tensor, images_to_tensor, tensor_to_image, ImageDistribution, ModelView, RewardDistribution,
    WorldModel,
};
pub use state::{FilteredState, LatentState, StateDistribution};
