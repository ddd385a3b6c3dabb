use candle_core::{DType, Device, Tensor, D};

use crate::nn::{log_softmax, Sampler};
use crate::{Error, Result};

/// Deterministic recurrent state `h` paired with the categorical sample `z`.
#[derive(Clone, Debug)]
pub struct LatentState {
    /// `(N, deter)`
    pub h: Tensor,
    /// `(N, groups, classes)`; each group one-hot once sampled.
    pub z: Tensor,
}

impl LatentState {
    pub fn zeros(batch: usize, deter: usize, groups: usize, classes: usize, dtype: DType) -> Result<Self> {
        if batch < 1 {
            return Err(Error::argument("batch size must be >= 1"));
        }
        Ok(Self {
            h: Tensor::zeros((batch, deter), dtype, &Device::Cpu)?,
            z: Tensor::zeros((batch, groups, classes), dtype, &Device::Cpu)?,
        })
    }

    pub fn batch(&self) -> usize {
        self.h.dims()[0]
    }

    /// `z` flattened to `(N, groups·classes)`.
    pub fn z_flat(&self) -> Result<Tensor> {
        Ok(self.z.flatten_from(1)?)
    }

    /// `[h, flat z]` concatenated along features.
    pub fn concat(&self) -> Result<Tensor> {
        Ok(Tensor::cat(&[&self.h, &self.z_flat()?], 1)?)
    }

    pub fn detach(&self) -> Self {
        Self { h: self.h.detach(), z: self.z.detach() }
    }

    /// Stacks states along the batch dimension.
    pub fn stack(states: &[LatentState]) -> Result<Self> {
        let hs: Vec<&Tensor> = states.iter().map(|s| &s.h).collect();
        let zs: Vec<&Tensor> = states.iter().map(|s| &s.z).collect();
        Ok(Self { h: Tensor::cat(&hs, 0)?, z: Tensor::cat(&zs, 0)? })
    }
}

/// Independent categorical distributions, one per group.
#[derive(Clone, Debug)]
pub struct StateDistribution {
    /// `(N, groups, classes)`
    pub logits: Tensor,
}

impl StateDistribution {
    pub fn new(logits: Tensor) -> Self {
        Self { logits }
    }

    pub fn log_probs(&self) -> Result<Tensor> {
        Ok(log_softmax(&self.logits)?)
    }

    pub fn probs(&self) -> Result<Tensor> {
        Ok(self.log_probs()?.exp()?)
    }

    /// Straight-through sample: one-hot in value, softmax-probability gradient.
    pub fn sample(&self, sampler: &mut Sampler) -> Result<Tensor> {
        sampler.categorical_st(&self.probs()?)
    }

    /// `KL(self ‖ other)` summed over groups, shape `(N,)`.
    pub fn kl(&self, other: &StateDistribution) -> Result<Tensor> {
        let lq = self.log_probs()?;
        let lp = other.log_probs()?;
        Ok((lq.exp()? * (lq - lp)?)?.sum(D::Minus1)?.sum(D::Minus1)?)
    }

    pub fn detach(&self) -> Self {
        Self { logits: self.logits.detach() }
    }
}

/// Driving-relevant features produced by the semantic filter, `(N, dim)`.
///
/// Only the filter (or, for the unfiltered ablation, the raw state
/// concatenation) constructs these; the mask and reward heads, the actor and
/// the critic accept nothing else.
#[derive(Clone, Debug)]
pub struct FilteredState(pub(crate) Tensor);

impl FilteredState {
    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn detach(&self) -> Self {
        Self(self.0.detach())
    }

    pub fn batch(&self) -> usize {
        self.0.dims()[0]
    }

    /// Wraps an arbitrary feature tensor; intended for tests and tools that
    /// drive heads with synthetic features.
    pub fn from_tensor(t: Tensor) -> Self {
        Self(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(v: &[[[f64; 3]; 2]; 1]) -> StateDistribution {
        StateDistribution::new(Tensor::new(v, &Device::Cpu).unwrap())
    }

    #[test]
    fn kl_matches_hand_rolled_sum() {
        let q = dist(&[[[0.3, -1.0, 2.0], [0.0, 0.5, -0.5]]]);
        let p = dist(&[[[1.0, 0.0, 0.0], [-2.0, 0.1, 0.7]]]);
        let got = q.kl(&p).unwrap().to_vec1::<f64>().unwrap()[0];
        let soft = |l: &[f64]| {
            let m = l.iter().cloned().fold(f64::MIN, f64::max);
            let s: f64 = l.iter().map(|x| (x - m).exp()).sum();
            l.iter().map(|x| (x - m).exp() / s).collect::<Vec<_>>()
        };
        let mut want = 0.0;
        for (lq, lp) in [([0.3, -1.0, 2.0], [1.0, 0.0, 0.0]), ([0.0, 0.5, -0.5], [-2.0, 0.1, 0.7])] {
            let (a, b) = (soft(&lq), soft(&lp));
            want += a.iter().zip(&b).map(|(x, y)| x * (x / y).ln()).sum::<f64>();
        }
        assert!((got - want).abs() < 1e-12);
        assert!(q.kl(&q).unwrap().to_vec1::<f64>().unwrap()[0].abs() < 1e-15);
    }

    #[test]
    fn zero_batch_rejected() {
        assert!(LatentState::zeros(0, 4, 2, 3, DType::F32).is_err());
    }
}
