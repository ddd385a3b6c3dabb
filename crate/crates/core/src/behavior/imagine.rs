use candle_core::Tensor;

use super::nets::{Actor, Critic};
use crate::nn::{Sampler, Weights};
use crate::worldmodel::{FilteredState, LatentState, WorldModel};
use crate::{Error, Result};

/// Latent rollout of `I` steps from a batch of start states.
///
/// `states` and `filtered` have `I + 1` entries, `actions`, `entropies` and
/// `rewards` have `I`. `rewards[t]` is predicted from `filtered[t + 1]`, the
/// reward earned by `actions[t]`.
#[derive(Clone, Debug)]
pub struct ImaginedTrajectory {
    pub states: Vec<LatentState>,
    pub filtered: Vec<FilteredState>,
    /// Normalized `(N, 2)` actions.
    pub actions: Vec<Tensor>,
    /// `(N,)` per-step action entropies.
    pub entropies: Vec<Tensor>,
    /// `(N,)` per-step predicted rewards in environment units.
    pub rewards: Vec<Tensor>,
    pub gamma: f64,
}

impl ImaginedTrajectory {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    /// `(I, N)` stacked rewards.
    pub fn reward_tensor(&self) -> Result<Tensor> {
        Ok(Tensor::stack(&self.rewards, 0)?)
    }

    /// `(I, N)` constant discounts.
    pub fn discounts(&self) -> Result<Tensor> {
        Ok((self.reward_tensor()?.ones_like()? * self.gamma)?)
    }

    /// `(I + 1, N)` critic values of every filtered state under `weights`.
    pub fn values(&self, critic: &Critic, weights: &Weights) -> Result<Tensor> {
        let v = self.filtered.iter().map(|f| critic.forward(weights, f)).collect::<Result<Vec<_>>>()?;
        Ok(Tensor::stack(&v, 0)?)
    }
}

/// Source of actions during imagination.
pub enum Policy<'a> {
    /// Reparameterized samples from the actor's live weights.
    Actor(&'a Actor),
    /// The same normalized `(N, 2)` action at every step.
    Constant(&'a Tensor),
}

/// Rolls the frozen world model forward from detached `start` states.
/// Only the prior is used; no observation enters the rollout.
pub fn imagine(
    model: &WorldModel,
    policy: Policy<'_>,
    start: &LatentState,
    horizon: usize,
    gamma: f64,
    sampler: &mut Sampler,
) -> Result<ImaginedTrajectory> {
    if horizon < 1 {
        return Err(Error::argument("imagination horizon must be >= 1"));
    }
    let view = model.frozen();
    let mut state = start.detach();
    let mut traj = ImaginedTrajectory {
        filtered: vec![view.filter(&state)?],
        states: vec![state.clone()],
        actions: Vec::with_capacity(horizon),
        entropies: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
        gamma,
    };
    for t in 0..horizon {
        let (action, entropy) = match &policy {
            Policy::Actor(actor) => {
                let dist = actor.dist(&traj.filtered[t])?;
                let (a, u) = dist.rsample(sampler)?;
                (a, dist.entropy(&u)?)
            }
            Policy::Constant(a) => ((*a).clone(), Tensor::zeros(state.batch(), a.dtype(), a.device())?),
        };
        let (next, _) = view.imagine_step(&state, &action, sampler)?;
        let features = view.filter(&next)?;
        traj.rewards.push(view.predict_reward(&features)?.mean()?);
        traj.actions.push(action);
        traj.entropies.push(entropy);
        traj.filtered.push(features);
        traj.states.push(next.clone());
        state = next;
    }
    Ok(traj)
}

/// λ-returns with the backward recursion
/// `V_t = r_t + γ((1 - λ) v_{t+1} + λ V_{t+1})`, closed by `V_{I-1} = r_{I-1} + γ v_I`.
///
/// `rewards` is `(I, ..)` and `values` is `(I + 1, ..)`; the result has the
/// shape of `rewards`. Differentiable in both inputs.
pub fn td_lambda(rewards: &Tensor, values: &Tensor, gamma: f64, lambda: f64) -> Result<Tensor> {
    let i = rewards.dims()[0];
    if values.dims()[0] != i + 1 || values.dims()[1..] != rewards.dims()[1..] {
        return Err(Error::argument(format!(
            "values {:?} must have one more step than rewards {:?}",
            values.dims(),
            rewards.dims()
        )));
    }
    if !(0.0..=1.0).contains(&gamma) || !(0.0..=1.0).contains(&lambda) {
        return Err(Error::argument("gamma and lambda must lie in [0, 1]"));
    }
    let mut next = values.get(i)?;
    let mut out = Vec::with_capacity(i);
    for t in (0..i).rev() {
        let bootstrap = if t + 1 == i {
            values.get(i)?
        } else {
            ((values.get(t + 1)? * (1.0 - lambda))? + (&next * lambda)?)?
        };
        next = (rewards.get(t)? + (bootstrap * gamma)?)?;
        out.push(next.clone());
    }
    out.reverse();
    Ok(Tensor::stack(&out, 0)?)
}

/// Number of leading targets that enter the critic and actor objectives:
/// all but the last, or the single target of a one-step rollout.
pub fn trained_steps(horizon: usize) -> usize {
    horizon.saturating_sub(1).max(1)
}

/// Half squared error between critic values and stop-gradient targets,
/// averaged over batch and the leading [`trained_steps`] positions.
///
/// `values` is `(I + 1, N)` or `(I, N)`, `targets` is `(I, N)`.
pub fn critic_loss(values: &Tensor, targets: &Tensor) -> Result<Tensor> {
    let n = trained_steps(targets.dims()[0]);
    let diff = (values.narrow(0, 0, n)? - targets.narrow(0, 0, n)?.detach())?;
    Ok((diff.sqr()?.mean_all()? * 0.5)?)
}

/// `-mean(V) - η·mean(H)`: minimized to raise both return and entropy.
pub fn actor_loss(targets: &Tensor, entropies: &Tensor, eta: f64) -> Result<Tensor> {
    let n = trained_steps(targets.dims()[0]);
    let ret = targets.narrow(0, 0, n)?.mean_all()?;
    let ent = entropies.mean_all()?;
    Ok((ret.neg()? - (ent * eta)?)?)
}
