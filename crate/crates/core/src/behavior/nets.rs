use candle_core::{DType, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::envsim::{Action, STEER_LIMIT, THROTTLE_LIMIT};
use crate::nn::{softplus, Init, Mlp, ParamStore, Sampler, Weights};
use crate::worldmodel::FilteredState;
use crate::Result;

const MIN_STD: f64 = 0.1;
const HALF_LOG_2PI_E: f64 = 1.418_938_533_204_672_7;

/// `ln(1 - tanh(u)^2)` without cancellation for large `|u|`.
fn log_tanh_derivative(u: &Tensor) -> Result<Tensor> {
    let t = ((u.neg()? + std::f64::consts::LN_2)? - softplus(&(u * -2.0)?)?)?;
    Ok((t * 2.0)?)
}

/// Tanh-squashed diagonal Gaussian over normalized actions.
#[derive(Clone, Debug)]
pub struct ActionDistribution {
    /// `(N, 2)` pre-squash mean.
    pub mean: Tensor,
    /// `(N, 2)` pre-squash standard deviation.
    pub std: Tensor,
}

impl ActionDistribution {
    /// Reparameterized draw. Returns the normalized action `tanh(u)` and the
    /// pre-squash `u`.
    pub fn rsample(&self, sampler: &mut Sampler) -> Result<(Tensor, Tensor)> {
        let eps = sampler.normal(self.mean.dims(), self.mean.dtype(), self.mean.device())?;
        let u = (&self.mean + (&self.std * eps)?)?;
        Ok((u.tanh()?, u))
    }

    /// Normalized distribution mode `tanh(mean)`.
    pub fn mode(&self) -> Result<Tensor> {
        Ok(self.mean.tanh()?)
    }

    /// Single-sample estimate of the entropy of the action in environment
    /// units, `H[u] + E[ln |da/du|]`, evaluated at pre-squash sample `u`.
    /// Shape `(N,)`.
    pub fn entropy(&self, u: &Tensor) -> Result<Tensor> {
        let gaussian = (self.std.log()? + HALF_LOG_2PI_E)?;
        let squash = log_tanh_derivative(u)?;
        let scale = THROTTLE_LIMIT.ln() + STEER_LIMIT.ln();
        Ok(((gaussian + squash)?.sum(1)? + scale)?)
    }
}

/// Converts normalized `(N, 2)` actions into clamped environment actions.
pub fn tensor_to_actions(t: &Tensor) -> Result<Vec<Action>> {
    let rows: Vec<Vec<f64>> = t.to_dtype(DType::F64)?.to_vec2()?;
    Ok(rows.into_iter().map(|r| Action::from_normalized([r[0], r[1]])).collect())
}

/// Stochastic policy over filtered features.
#[derive(Debug)]
pub struct Actor {
    store: ParamStore,
    net: Mlp,
}

impl Actor {
    pub fn new(feature_dim: usize, hidden: usize, dtype: DType, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new(dtype);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Mlp::new(&mut Init::new(&mut store, &mut rng), "policy", feature_dim, &[hidden, hidden], 4)?;
        Ok(Self { store, net })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn forward(&self, w: &Weights, features: &FilteredState) -> Result<ActionDistribution> {
        let out = self.net.forward(w, features.tensor())?;
        let mean = out.narrow(1, 0, 2)?;
        let std = (softplus(&out.narrow(1, 2, 2)?)? + MIN_STD)?;
        Ok(ActionDistribution { mean, std })
    }

    pub fn dist(&self, features: &FilteredState) -> Result<ActionDistribution> {
        self.forward(&self.store.live(), features)
    }
}

/// State-value head over filtered features.
#[derive(Debug)]
pub struct Critic {
    store: ParamStore,
    net: Mlp,
}

impl Critic {
    pub fn new(feature_dim: usize, hidden: usize, dtype: DType, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new(dtype);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Mlp::new(&mut Init::new(&mut store, &mut rng), "value", feature_dim, &[hidden, hidden], 1)?;
        Ok(Self { store, net })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    /// `(N,)` values.
    pub fn forward(&self, w: &Weights, features: &FilteredState) -> Result<Tensor> {
        Ok(self.net.forward(w, features.tensor())?.squeeze(1)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn stable_log_tanh_derivative() {
        let u = Tensor::new(&[-30.0f64, -1.0, 0.0, 0.5, 30.0], &Device::Cpu).unwrap();
        let got = log_tanh_derivative(&u).unwrap().to_vec1::<f64>().unwrap();
        for (g, x) in got.iter().zip([-30.0f64, -1.0, 0.0, 0.5, 30.0]) {
            let want = if x.abs() < 10.0 { (1.0 - x.tanh().powi(2)).ln() } else { 2.0 * (2f64.ln() - x.abs()) };
            assert!((g - want).abs() < 1e-9, "{x}: {g} vs {want}");
        }
    }

    #[test]
    fn actions_stay_in_bounds() {
        let actor = Actor::new(5, 8, DType::F64, 0).unwrap();
        let f = FilteredState::from_tensor((Tensor::ones((64, 5), DType::F64, &Device::Cpu).unwrap() * 40.0).unwrap());
        let d = actor.dist(&f).unwrap();
        let (a, _) = d.rsample(&mut Sampler::seeded(0)).unwrap();
        for act in tensor_to_actions(&a).unwrap() {
            assert!(act.throttle.abs() <= THROTTLE_LIMIT && act.steer.abs() <= STEER_LIMIT);
        }
    }

    #[test]
    fn entropy_of_wide_unsquashed_region() {
        // near u = 0 the squash is locally linear, so the estimate reduces to
        // the Gaussian entropy plus the log of the box scale
        let d = ActionDistribution {
            mean: Tensor::zeros((1, 2), DType::F64, &Device::Cpu).unwrap(),
            std: Tensor::new(&[[0.5f64, 2.0]], &Device::Cpu).unwrap(),
        };
        let u = Tensor::zeros((1, 2), DType::F64, &Device::Cpu).unwrap();
        let h = d.entropy(&u).unwrap().to_vec1::<f64>().unwrap()[0];
        let want = 2.0 * HALF_LOG_2PI_E + 0.5f64.ln() + 2f64.ln() + 3f64.ln() + 0.5f64.ln();
        assert!((h - want).abs() < 1e-12);
    }
}
