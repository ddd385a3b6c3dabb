//! Semantic-masked recurrent world model for top-down driving.
//!
//! The crate is split along the training pipeline:
//!
//! - [`envsim`]: a seedable 2D driving simulator that renders distractor-laden
//!   observations alongside weather-free semantic masks.
//! - [`worldmodel`]: the recurrent latent model with its semantic filter,
//!   decoders and variational loss.
//! - [`replay`]: common and corner-case episode buffers with a round-robin
//!   sequence sampler.
//! - [`behavior`]: actor-critic learning on imagined latent rollouts.
//! - [`pipeline`]: training, evaluation, inspection, checkpoints and metrics.
//!
//! [`nn`] holds the small set of differentiable building blocks shared by the
//! model and the behavior learner.

pub mod behavior;
pub mod envsim;
pub mod error;
pub mod nn;
pub mod pipeline;
pub mod replay;
pub mod worldmodel;

pub use error::{Error, Result};
