use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use super::imagine::{actor_loss, critic_loss, imagine, td_lambda, Policy};
use super::nets::{Actor, Critic};
use crate::nn::{Adam, AdamConfig, Sampler};
use crate::worldmodel::{LatentState, WorldModel};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BehaviorConfig {
    /// Imagination horizon `I`.
    pub horizon: usize,
    pub gamma: f64,
    pub lambda: f64,
    /// Entropy bonus weight.
    pub eta: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub hidden: usize,
    pub grad_clip: f64,
}

impl Default for BehaviorConfig {
    fn default() -> Self {
        Self {
            horizon: 4,
            gamma: 0.99,
            lambda: 0.95,
            eta: 1e-4,
            actor_lr: 1e-5,
            critic_lr: 1e-5,
            hidden: 256,
            grad_clip: 100.0,
        }
    }
}

impl BehaviorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 || self.hidden < 1 {
            return Err(Error::config("behavior.horizon and behavior.hidden must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config("behavior.gamma and behavior.lambda must lie in [0, 1]"));
        }
        if !(self.eta >= 0.0) {
            return Err(Error::config("behavior.eta must be >= 0"));
        }
        if !(self.actor_lr > 0.0) || !(self.critic_lr > 0.0) || !(self.grad_clip > 0.0) {
            return Err(Error::config("behavior learning rates and grad_clip must be > 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BehaviorStats {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub imagined_reward: f64,
    pub target_mean: f64,
}

/// Actor, critic and their optimizers.
#[derive(Debug)]
pub struct BehaviorLearner {
    config: BehaviorConfig,
    pub actor: Actor,
    pub critic: Critic,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
}

impl BehaviorLearner {
    pub fn new(config: BehaviorConfig, feature_dim: usize, dtype: DType, seed: u64) -> Result<Self> {
        config.validate()?;
        let actor = Actor::new(feature_dim, config.hidden, dtype, seed)?;
        let critic = Critic::new(feature_dim, config.hidden, dtype, seed.wrapping_add(1))?;
        let opt = |lr: f64| AdamConfig { clip_norm: Some(config.grad_clip), ..AdamConfig::with_lr(lr) };
        let actor_opt = Adam::new(opt(config.actor_lr), actor.store())?;
        let critic_opt = Adam::new(opt(config.critic_lr), critic.store())?;
        Ok(Self { config, actor, critic, actor_opt, critic_opt })
    }

    pub fn config(&self) -> &BehaviorConfig {
        &self.config
    }

    /// One actor and one critic step on rollouts imagined from `start`.
    ///
    /// The world model and, inside the actor objective, the critic are read
    /// through frozen weights, so only the actor receives gradients from the
    /// return and only the critic from its regression loss.
    pub fn update(&mut self, model: &WorldModel, start: &LatentState, sampler: &mut Sampler) -> Result<BehaviorStats> {
        let c = &self.config;
        let traj = imagine(model, Policy::Actor(&self.actor), start, c.horizon, c.gamma, sampler)?;
        let rewards = traj.reward_tensor()?;
        let values = traj.values(&self.critic, &self.critic.store().frozen())?;
        let targets = td_lambda(&rewards, &values, c.gamma, c.lambda)?;
        let entropies = Tensor::stack(&traj.entropies, 0)?;
        let a_loss = actor_loss(&targets, &entropies, c.eta)?;

        let live = self.critic.store().live();
        let live_values = traj.filtered.iter().map(|f| self.critic.forward(&live, &f.detach())).collect::<Result<Vec<_>>>()?;
        let c_loss = critic_loss(&Tensor::stack(&live_values, 0)?, &targets.detach())?;

        let stats = BehaviorStats {
            actor_loss: a_loss.to_dtype(DType::F64)?.to_scalar()?,
            critic_loss: c_loss.to_dtype(DType::F64)?.to_scalar()?,
            entropy: entropies.mean_all()?.to_dtype(DType::F64)?.to_scalar()?,
            imagined_reward: rewards.mean_all()?.to_dtype(DType::F64)?.to_scalar()?,
            target_mean: targets.mean_all()?.to_dtype(DType::F64)?.to_scalar()?,
        };
        for (name, v) in [("actor_loss", stats.actor_loss), ("critic_loss", stats.critic_loss)] {
            if !v.is_finite() {
                return Err(Error::NonFinite { component: name.into() });
            }
        }
        let actor_grads = self.actor.store().grads(&a_loss.backward()?);
        let critic_grads = self.critic.store().grads(&c_loss.backward()?);
        self.actor_opt.step(self.actor.store(), &actor_grads)?;
        self.critic_opt.step(self.critic.store(), &critic_grads)?;
        Ok(stats)
    }
}
