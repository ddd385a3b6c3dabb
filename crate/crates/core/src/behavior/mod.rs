//! Actor-critic learning on rollouts imagined in the world model.
//!
//! Both networks read only [`FilteredState`](crate::worldmodel::FilteredState)
//! features. Actor gradients flow back through the frozen latent dynamics;
//! the critic regresses λ-returns.

mod imagine;
mod learner;
mod nets;

pub use imagine::{actor_loss, critic_loss, imagine, td_lambda, trained_steps, ImaginedTrajectory, Policy};
pub use learner::{BehaviorConfig, BehaviorLearner, BehaviorStats};
pub use nets::{tensor_to_actions, ActionDistribution, Actor, Critic};
