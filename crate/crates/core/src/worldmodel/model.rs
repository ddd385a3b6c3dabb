use candle_core::{DType, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::WorldModelConfig;
use super::state::{FilteredState, LatentState, StateDistribution};
use crate::envsim::{Action, Image};
use crate::nn::{elu, ConvDecoder, ConvEncoder, GruCell, Init, Linear, Mlp, ParamStore, Sampler, Weights};
use crate::{Error, Result};

const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_7;

/// Converts 8-bit HWC images into a normalized `(N, 3, H, W)` tensor with
/// values `pixel / 255 - 0.5`.
pub fn images_to_tensor<'a>(images: impl IntoIterator<Item = &'a Image>, dtype: DType) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut count = 0;
    let mut size = None;
    for img in images {
        let (h, w) = (img.height(), img.width());
        if *size.get_or_insert((h, w)) != (h, w) {
            return Err(Error::argument("images in one batch must share a shape"));
        }
        let px = img.data();
        for ch in 0..3 {
            for i in 0..h * w {
                data.push(px[i * 3 + ch] as f32 / 255.0 - 0.5);
            }
        }
        count += 1;
    }
    let (h, w) = size.ok_or_else(|| Error::argument("empty image batch"))?;
    Ok(Tensor::from_vec(data, (count, 3, h, w), &candle_core::Device::Cpu)?.to_dtype(dtype)?)
}

/// Inverse of [`images_to_tensor`] for one `(3, H, W)` slice, rounding and clamping.
pub fn tensor_to_image(t: &Tensor) -> Result<Image> {
    let (c, h, w) = t.dims3()?;
    if c != 3 {
        return Err(Error::argument("expected a 3-channel image tensor"));
    }
    let v: Vec<f64> = t.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?;
    let mut data = vec![0u8; h * w * 3];
    for ch in 0..3 {
        for i in 0..h * w {
            data[i * 3 + ch] = ((v[ch * h * w + i] + 0.5) * 255.0).round().clamp(0.0, 255.0) as u8;
        }
    }
    Image::from_raw(h, w, data)
}

/// Stacks normalized actions into `(N, 2)`.
pub fn actions_to_tensor(actions: &[Action], dtype: DType) -> Result<Tensor> {
    let v: Vec<f64> = actions.iter().flat_map(|a| a.normalized()).collect();
    Ok(Tensor::from_vec(v, (actions.len(), 2), &candle_core::Device::Cpu)?.to_dtype(dtype)?)
}

/// Unit-variance Gaussian over normalized pixels, `(N, 3, H, W)` means.
#[derive(Clone, Debug)]
pub struct ImageDistribution {
    pub mean: Tensor,
}

impl ImageDistribution {
    /// Negative log-likelihood summed over pixels, shape `(N,)`.
    pub fn nll(&self, target: &Tensor) -> Result<Tensor> {
        let sq = (&self.mean - target)?.sqr()?.flatten_from(1)?;
        let per_elem = sq.dims()[1] as f64;
        Ok(((sq.sum(1)? * 0.5)? + per_elem * HALF_LOG_2PI)?)
    }

    pub fn mode_image(&self, index: usize) -> Result<Image> {
        tensor_to_image(&self.mean.get(index)?)
    }
}

/// Unit-variance Gaussian over scaled rewards.
#[derive(Clone, Debug)]
pub struct RewardDistribution {
    /// `(N,)` in scaled units.
    pub scaled_mean: Tensor,
    pub scale: f64,
}

impl RewardDistribution {
    /// Mean in environment reward units.
    pub fn mean(&self) -> Result<Tensor> {
        Ok((&self.scaled_mean / self.scale)?)
    }

    /// Per-element negative log-likelihood of rewards given in environment units.
    pub fn nll(&self, reward: &Tensor) -> Result<Tensor> {
        let target = (reward * self.scale)?;
        Ok((((&self.scaled_mean - target)?.sqr()? * 0.5)? + HALF_LOG_2PI)?)
    }
}

/// The recurrent latent model and its semantic filter.
///
/// Parameters live in [`WorldModel::store`]; computations go through a
/// [`ModelView`] obtained from [`WorldModel::live`] (trainable) or
/// [`WorldModel::frozen`] (gradient-free, used during behavior learning).
#[derive(Debug)]
pub struct WorldModel {
    config: WorldModelConfig,
    store: ParamStore,
    encoder: ConvEncoder,
    recurrent_in: Linear,
    recurrent: GruCell,
    prior: Mlp,
    posterior: Mlp,
    filter: Option<Mlp>,
    mask_decoder: Option<ConvDecoder>,
    obs_decoder: ConvDecoder,
    reward_head: Mlp,
}

impl WorldModel {
    /// `with_filter = false` builds the unfiltered ablation: reward head and
    /// downstream consumers read `[h, z]` directly and there is no mask head.
    pub fn new(config: WorldModelConfig, with_filter: bool, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut store = ParamStore::new(c.precision.dtype());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init::new(&mut store, &mut rng);
        let stoch = c.stoch_dim();
        let state_dim = c.deter + stoch;
        let encoder = ConvEncoder::new(&mut init, "encoder", c.image_size, c.cnn_depth)?;
        let recurrent_in = Linear::new(&mut init, "recurrent_in", stoch + 2, c.hidden)?;
        let recurrent = GruCell::new(&mut init, "recurrent", c.hidden, c.deter)?;
        let prior = Mlp::new(&mut init, "prior", c.deter, &[c.hidden], stoch)?;
        let posterior = Mlp::new(&mut init, "posterior", c.deter + encoder.out_dim(), &[c.hidden], stoch)?;
        let (filter, mask_decoder, feature_dim) = if with_filter {
            let f = Mlp::new(&mut init, "filter", state_dim, &[c.hidden, c.hidden], c.filter_dim)?;
            let m = ConvDecoder::new(&mut init, "mask_decoder", c.filter_dim, c.image_size, c.cnn_depth)?;
            (Some(f), Some(m), c.filter_dim)
        } else {
            (None, None, state_dim)
        };
        let obs_decoder = ConvDecoder::new(&mut init, "obs_decoder", state_dim, c.image_size, c.cnn_depth)?;
        let reward_head = Mlp::new(&mut init, "reward", feature_dim, &[c.hidden, c.hidden], 1)?;
        Ok(Self {
            config,
            store,
            encoder,
            recurrent_in,
            recurrent,
            prior,
            posterior,
            filter,
            mask_decoder,
            obs_decoder,
            reward_head,
        })
    }

    pub fn config(&self) -> &WorldModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn has_filter(&self) -> bool {
        self.filter.is_some()
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    /// Width of [`FilteredState`] features for this wiring.
    pub fn feature_dim(&self) -> usize {
        if self.has_filter() {
            self.config.filter_dim
        } else {
            self.config.deter + self.config.stoch_dim()
        }
    }

    pub fn live(&self) -> ModelView<'_> {
        ModelView { model: self, weights: self.store.live() }
    }

    pub fn frozen(&self) -> ModelView<'_> {
        ModelView { model: self, weights: self.store.frozen() }
    }

    /// Zero `h` and an all-zero `z` standing for "no sample yet".
    pub fn initial_state(&self, batch: usize) -> Result<LatentState> {
        let c = &self.config;
        LatentState::zeros(batch, c.deter, c.groups, c.classes, self.dtype())
    }
}

/// A [`WorldModel`] bound to one set of weights.
pub struct ModelView<'a> {
    model: &'a WorldModel,
    weights: Weights,
}

impl<'a> ModelView<'a> {
    pub fn model(&self) -> &'a WorldModel {
        self.model
    }

    fn split_groups(&self, flat: Tensor) -> Result<Tensor> {
        let c = &self.model.config;
        Ok(flat.reshape(((), c.groups, c.classes))?)
    }

    /// Embeds normalized `(N, 3, H, W)` observations.
    pub fn encode(&self, obs: &Tensor) -> Result<Tensor> {
        self.model.encoder.forward(&self.weights, obs)
    }

    /// `h_t = f(h_{t-1}, z_{t-1}, a_{t-1})`.
    pub fn recurrent_step(&self, prev: &LatentState, action: &Tensor) -> Result<Tensor> {
        let (n, d) = action.dims2()?;
        if n != prev.batch() || d != 2 {
            return Err(Error::argument(format!(
                "action batch {:?} does not match state batch {}",
                action.dims(),
                prev.batch()
            )));
        }
        let x = Tensor::cat(&[&prev.z_flat()?, action], 1)?;
        let x = elu(&self.model.recurrent_in.forward(&self.weights, &x)?)?;
        self.model.recurrent.forward(&self.weights, &x, &prev.h)
    }

    /// Transition predictor `p(ẑ_t | h_t)`.
    pub fn prior(&self, h: &Tensor) -> Result<StateDistribution> {
        let logits = self.model.prior.forward(&self.weights, h)?;
        Ok(StateDistribution::new(self.split_groups(logits)?))
    }

    /// Representation model `q(z_t | h_t, o_t)` given an observation embedding.
    pub fn posterior(&self, h: &Tensor, embed: &Tensor) -> Result<StateDistribution> {
        let logits = self.model.posterior.forward(&self.weights, &Tensor::cat(&[h, embed], 1)?)?;
        Ok(StateDistribution::new(self.split_groups(logits)?))
    }

    /// One filtering step with a pre-computed observation embedding.
    pub fn observe_embedded(
        &self,
        prev: &LatentState,
        action: &Tensor,
        embed: &Tensor,
        sampler: &mut Sampler,
    ) -> Result<(LatentState, StateDistribution, StateDistribution)> {
        if embed.dims()[0] != prev.batch() {
            return Err(Error::argument("embedding batch does not match state batch"));
        }
        let h = self.recurrent_step(prev, action)?;
        let prior = self.prior(&h)?;
        let post = self.posterior(&h, embed)?;
        let z = post.sample(sampler)?;
        Ok((LatentState { h, z }, post, prior))
    }

    /// Returns `(posterior state, posterior, prior)` for normalized observations.
    pub fn observe_step(
        &self,
        prev: &LatentState,
        action: &Tensor,
        obs: &Tensor,
        sampler: &mut Sampler,
    ) -> Result<(LatentState, StateDistribution, StateDistribution)> {
        let size = self.model.config.image_size;
        match obs.dims() {
            [n, 3, h, w] if *n == prev.batch() && *h == size && *w == size => {}
            dims => {
                return Err(Error::argument(format!(
                    "observation shape {dims:?} does not match (batch {}, 3, {size}, {size})",
                    prev.batch()
                )))
            }
        }
        let embed = self.encode(obs)?;
        self.observe_embedded(prev, action, &embed, sampler)
    }

    /// Same recurrent update as [`Self::observe_step`] with `z` drawn from the prior.
    pub fn imagine_step(
        &self,
        prev: &LatentState,
        action: &Tensor,
        sampler: &mut Sampler,
    ) -> Result<(LatentState, StateDistribution)> {
        let h = self.recurrent_step(prev, action)?;
        let prior = self.prior(&h)?;
        let z = prior.sample(sampler)?;
        Ok((LatentState { h, z }, prior))
    }

    /// Semantic filter; for the unfiltered ablation this is the plain `[h, z]` concatenation.
    pub fn filter(&self, state: &LatentState) -> Result<FilteredState> {
        let x = state.concat()?;
        match &self.model.filter {
            Some(f) => Ok(FilteredState(f.forward(&self.weights, &x)?)),
            None => Ok(FilteredState(x)),
        }
    }

    /// `None` when the model has no mask head.
    pub fn predict_mask(&self, features: &FilteredState) -> Result<Option<ImageDistribution>> {
        match &self.model.mask_decoder {
            Some(d) => Ok(Some(ImageDistribution { mean: d.forward(&self.weights, &features.0)? })),
            None => Ok(None),
        }
    }

    pub fn predict_obs(&self, state: &LatentState) -> Result<ImageDistribution> {
        let mean = self.model.obs_decoder.forward(&self.weights, &state.concat()?)?;
        Ok(ImageDistribution { mean })
    }

    pub fn predict_reward(&self, features: &FilteredState) -> Result<RewardDistribution> {
        let out = self.model.reward_head.forward(&self.weights, &features.0)?;
        Ok(RewardDistribution { scaled_mean: out.squeeze(1)?, scale: self.model.config.reward_scale })
    }
}
