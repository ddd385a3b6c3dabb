use rand::Rng;

use super::config::RunConfig;
use crate::behavior::{tensor_to_actions, BehaviorLearner, BehaviorStats};
use crate::envsim::{Action, Observation, STEER_LIMIT, THROTTLE_LIMIT};
use crate::nn::{Adam, AdamConfig, Sampler};
use crate::replay::SequenceBatch;
use crate::worldmodel::{actions_to_tensor, images_to_tensor, train_step, LatentState, LossBreakdown, TrainingBatch, WorldModel};
use crate::{Error, Result};

/// Seed offsets keeping the independent random streams of a run apart.
pub(crate) mod stream {
    pub const MODEL_INIT: u64 = 0x6d6f_6465_6c00;
    pub const BEHAVIOR_INIT: u64 = 0x6265_6861_7600;
    pub const TRAIN: u64 = 0x7472_6169_6e00;
    pub const COLLECT: u64 = 0x636f_6c6c_6500;
    pub const EVAL: u64 = 0x6576_616c_0000;
}

/// Everything a run trains: world model, actor, critic and their optimizers.
#[derive(Debug)]
pub struct Agent {
    pub config: RunConfig,
    pub model: WorldModel,
    pub model_opt: Adam,
    pub behavior: BehaviorLearner,
    /// Completed update pairs.
    pub global_step: u64,
    pub env_step: u64,
}

impl Agent {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let seed = config.schedule.seed;
        let model = WorldModel::new(config.model.clone(), config.variant.uses_filter(), seed ^ stream::MODEL_INIT)?;
        let model_opt = Adam::new(
            AdamConfig { clip_norm: Some(config.model.grad_clip), ..AdamConfig::with_lr(config.model.lr) },
            model.store(),
        )?;
        let behavior =
            BehaviorLearner::new(config.behavior.clone(), model.feature_dim(), model.dtype(), seed ^ stream::BEHAVIOR_INIT)?;
        Ok(Self { config, model, model_opt, behavior, global_step: 0, env_step: 0 })
    }

    /// One world-model step on `batch` followed by one behavior step from its
    /// posterior states.
    pub fn update(&mut self, batch: &SequenceBatch, sampler: &mut Sampler) -> Result<(LossBreakdown, BehaviorStats, f64)> {
        let tensors = TrainingBatch::from_sequences(batch, self.model.dtype())?;
        let (loss, posteriors) = train_step(&self.model, &mut self.model_opt, &tensors, sampler)?;
        let grad_norm = self.model_opt.last_grad_norm();
        let stats = self.behavior.update(&self.model, &posteriors, sampler)?;
        self.global_step += 1;
        Ok((loss, stats, grad_norm))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ActMode {
    /// Distribution mode, no noise.
    Greedy,
    /// Policy sample plus extra Gaussian noise on the pre-squash action.
    Explore { noise_std: f64 },
    /// Uniform over the action box, ignoring the observation.
    Random,
}

/// Per-environment filtering state used to act online.
#[derive(Clone, Debug)]
pub struct Controller {
    state: LatentState,
    prev_action: Action,
}

impl Controller {
    pub fn new(agent: &Agent) -> Result<Self> {
        Ok(Self { state: agent.model.initial_state(1)?, prev_action: Action::ZERO })
    }

    pub fn reset(&mut self, agent: &Agent) -> Result<()> {
        *self = Self::new(agent)?;
        Ok(())
    }

    pub fn state(&self) -> &LatentState {
        &self.state
    }

    /// Folds `obs` into the latent state and picks the next action.
    pub fn act(&mut self, agent: &Agent, obs: &Observation, mode: ActMode, sampler: &mut Sampler) -> Result<Action> {
        if mode == ActMode::Random {
            let rng = sampler.rng();
            let action =
                Action::new(rng.random_range(-THROTTLE_LIMIT..=THROTTLE_LIMIT), rng.random_range(-STEER_LIMIT..=STEER_LIMIT));
            self.prev_action = action;
            return Ok(action);
        }
        let dtype = agent.model.dtype();
        let view = agent.model.frozen();
        let prev = actions_to_tensor(&[self.prev_action], dtype)?;
        let o = images_to_tensor([&obs.0], dtype)?;
        let (post, _, _) = view.observe_step(&self.state, &prev, &o, sampler)?;
        let features = view.filter(&post)?;
        let actor = &agent.behavior.actor;
        let dist = actor.forward(&actor.store().frozen(), &features)?;
        let action = match mode {
            ActMode::Greedy => tensor_to_actions(&dist.mode()?)?[0],
            ActMode::Explore { noise_std } => {
                let (_, u) = dist.rsample(sampler)?;
                let noise = (sampler.normal(u.dims(), u.dtype(), u.device())? * noise_std)?;
                tensor_to_actions(&(u + noise)?.tanh()?)?[0]
            }
            ActMode::Random => unreachable!("handled above"),
        };
        if !action.throttle.is_finite() || !action.steer.is_finite() {
            return Err(Error::NonFinite { component: "policy action".into() });
        }
        self.state = post;
        self.prev_action = action;
        Ok(action)
    }
}
