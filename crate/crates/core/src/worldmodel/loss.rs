use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use super::model::{actions_to_tensor, images_to_tensor, WorldModel};
use super::state::LatentState;
use crate::nn::{Adam, Sampler};
use crate::replay::SequenceBatch;
use crate::{Error, Result};

/// Time-major training tensors for `L` steps of `B` sequences.
#[derive(Clone, Debug)]
pub struct TrainingBatch {
    /// `(L, B, 3, H, W)` normalized observations.
    pub observations: Tensor,
    /// `(L, B, 3, H, W)` normalized masks.
    pub masks: Tensor,
    /// `(L, B, 2)` normalized actions preceding each observation.
    pub actions: Tensor,
    /// `(L, B)` rewards in environment units.
    pub rewards: Tensor,
}

impl TrainingBatch {
    pub fn from_sequences(batch: &SequenceBatch, dtype: DType) -> Result<Self> {
        let (l, b) = (batch.length, batch.batch_size());
        if b == 0 {
            return Err(Error::argument("empty sequence batch"));
        }
        let at = |t: usize| batch.sequences.iter().map(move |s| &s.records()[t]);
        let obs = (0..l).flat_map(|t| at(t).map(|r| &r.observation.0));
        let masks = (0..l).flat_map(|t| at(t).map(|r| &r.mask.0));
        let actions: Vec<_> = (0..l).flat_map(|t| at(t).map(|r| r.action)).collect();
        let rewards: Vec<f64> = (0..l).flat_map(|t| at(t).map(|r| r.reward)).collect();
        let observations = images_to_tensor(obs, dtype)?;
        let (_, c, h, w) = observations.dims4()?;
        Ok(Self {
            observations: observations.reshape((l, b, c, h, w))?,
            masks: images_to_tensor(masks, dtype)?.reshape((l, b, c, h, w))?,
            actions: actions_to_tensor(&actions, dtype)?.reshape((l, b, 2))?,
            rewards: Tensor::from_vec(rewards, (l, b), &candle_core::Device::Cpu)?.to_dtype(dtype)?,
        })
    }

    pub fn length(&self) -> usize {
        self.actions.dims()[0]
    }

    pub fn batch_size(&self) -> usize {
        self.actions.dims()[1]
    }
}

/// Per-term values of the world-model objective, each summed over time and
/// averaged over the batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub image_nll: f64,
    pub mask_nll: f64,
    pub reward_nll: f64,
    /// After balancing and free-nats clamping; this is the value `beta` multiplies.
    pub kl: f64,
    pub beta: f64,
    pub total: f64,
}

pub struct LossOutput {
    pub breakdown: LossBreakdown,
    /// Differentiable scalar total.
    pub total: Tensor,
    /// Detached posterior states of every `(t, b)`, stacked time-major to `(L·B, ..)`.
    pub posteriors: LatentState,
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Unrolls the posterior along the batch and evaluates the reconstruction
/// and KL terms. Uses the live weights so gradients reach every component.
pub fn loss(model: &WorldModel, batch: &TrainingBatch, sampler: &mut Sampler) -> Result<LossOutput> {
    let cfg = model.config();
    let (l, b) = (batch.length(), batch.batch_size());
    let view = model.live();
    let (_, _, c, h, w) = batch.observations.dims5()?;
    let embed = view.encode(&batch.observations.reshape((l * b, c, h, w))?)?;
    let embed = embed.reshape((l, b, ()))?;

    let mut state = model.initial_state(b)?;
    let mut states = Vec::with_capacity(l);
    let mut kl_steps = Vec::with_capacity(l);
    for t in 0..l {
        let (post, q, p) = view.observe_embedded(&state, &batch.actions.get(t)?, &embed.get(t)?, sampler)?;
        let kl = if cfg.kl_balancing {
            let a = cfg.kl_balance_mix;
            ((q.detach().kl(&p)? * a)? + (q.kl(&p.detach())? * (1.0 - a))?)?
        } else {
            q.kl(&p)?
        };
        let kl = if cfg.free_nats > 0.0 { kl.maximum(cfg.free_nats)? } else { kl };
        kl_steps.push(kl);
        states.push(post.clone());
        state = post;
    }
    let all = LatentState::stack(&states)?;
    let features = view.filter(&all)?;
    let per_step = |x: Tensor| -> Result<Tensor> { Ok((x.reshape((l, b))?.sum(0)?.mean(0))?) };

    let obs_target = batch.observations.reshape((l * b, c, h, w))?;
    let image_nll = per_step(view.predict_obs(&all)?.nll(&obs_target)?)?;
    let mask_nll = match view.predict_mask(&features)? {
        Some(d) => Some(per_step(d.nll(&batch.masks.reshape((l * b, c, h, w))?)?)?),
        None => None,
    };
    let reward_nll = per_step(view.predict_reward(&features)?.nll(&batch.rewards.flatten_all()?)?)?;
    let kl = per_step(Tensor::stack(&kl_steps, 0)?)?;

    let mut total = ((&image_nll + &reward_nll)? + (&kl * cfg.beta)?)?;
    if let Some(m) = &mask_nll {
        total = (total + m)?;
    }
    let mut values = [("image_nll", 0.0), ("mask_nll", 0.0), ("reward_nll", 0.0), ("kl", 0.0), ("total", 0.0)];
    let tensors = [Some(&image_nll), mask_nll.as_ref(), Some(&reward_nll), Some(&kl), Some(&total)];
    for ((name, v), t) in values.iter_mut().zip(tensors) {
        if let Some(t) = t {
            *v = scalar(t)?;
            if !v.is_finite() {
                return Err(Error::NonFinite { component: (*name).into() });
            }
        }
    }
    let breakdown = LossBreakdown {
        image_nll: values[0].1,
        mask_nll: values[1].1,
        reward_nll: values[2].1,
        kl: values[3].1,
        beta: cfg.beta,
        total: values[4].1,
    };
    Ok(LossOutput { breakdown, total, posteriors: all.detach() })
}

/// One optimizer step on the world-model parameters. Returns the loss
/// before the update and the detached posteriors for behavior learning.
pub fn train_step(
    model: &WorldModel,
    optimizer: &mut Adam,
    batch: &TrainingBatch,
    sampler: &mut Sampler,
) -> Result<(LossBreakdown, LatentState)> {
    let out = loss(model, batch, sampler)?;
    let grads = model.store().grads(&out.total.backward()?);
    optimizer.step(model.store(), &grads)?;
    if !model.store().all_finite()? {
        return Err(Error::NonFinite { component: "world model parameters".into() });
    }
    Ok((out.breakdown, out.posteriors))
}
