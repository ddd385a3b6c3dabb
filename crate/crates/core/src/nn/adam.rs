use std::collections::BTreeMap;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: Some(100.0) }
    }
}

/// Moment estimates, exported for checkpoints.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub step: u64,
    pub first: Vec<Tensor>,
    pub second: Vec<Tensor>,
}

/// Adaptive-moment gradient descent over one [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    state: AdamState,
    last_norm: f64,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Result<Self> {
        let zeros = || {
            store
                .ids()
                .map(|id| store.var(id).as_tensor().zeros_like())
                .collect::<candle_core::Result<Vec<_>>>()
        };
        Ok(Self {
            config,
            state: AdamState { step: 0, first: zeros()?, second: zeros()? },
            last_norm: 0.0,
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn state(&self) -> &AdamState {
        &self.state
    }

    /// Pre-clip gradient norm of the most recent step.
    pub fn last_grad_norm(&self) -> f64 {
        self.last_norm
    }

    /// Applies one update. Parameters without a gradient are left untouched
    /// and their moments do not decay. Returns the pre-clip global norm.
    pub fn step(&mut self, store: &ParamStore, grads: &[Option<Tensor>]) -> Result<f64> {
        if grads.len() != store.len() {
            return Err(Error::argument("gradient list does not match parameter store"));
        }
        let mut sq = 0.0;
        for g in grads.iter().flatten() {
            sq += g.sqr()?.sum_all()?.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
        }
        let norm = sq.sqrt();
        self.last_norm = norm;
        if !norm.is_finite() {
            return Err(Error::NonFinite { component: "gradient norm".into() });
        }
        let scale = match self.config.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.state.step += 1;
        let t = self.state.step as i32;
        let (b1, b2) = (self.config.beta1, self.config.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for ((i, g), id) in grads.iter().enumerate().zip(store.ids()) {
            let Some(g) = g else { continue };
            let g = (g.detach() * scale)?;
            let m = ((&self.state.first[i] * b1)? + (&g * (1.0 - b1))?)?;
            let v = ((&self.state.second[i] * b2)? + (g.sqr()? * (1.0 - b2))?)?;
            let denom = ((&v / c2)?.sqrt()? + self.config.eps)?;
            let delta = ((&m / c1)? / denom)?;
            let var = store.var(id);
            var.set(&(var.as_tensor().detach() - (delta * self.config.lr)?)?)?;
            self.state.first[i] = m;
            self.state.second[i] = v;
        }
        Ok(norm)
    }

    pub fn named_state(&self, store: &ParamStore, prefix: &str) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (i, name) in store.names().iter().enumerate() {
            out.insert(format!("{prefix}m.{name}"), self.state.first[i].clone());
            out.insert(format!("{prefix}v.{name}"), self.state.second[i].clone());
        }
        out
    }

    pub fn load_named_state(
        &mut self,
        store: &ParamStore,
        prefix: &str,
        step: u64,
        tensors: &BTreeMap<String, Tensor>,
    ) -> Result<()> {
        let mut missing = Vec::new();
        let mut first = Vec::new();
        let mut second = Vec::new();
        for (i, name) in store.names().iter().enumerate() {
            let dims = self.state.first[i].dims().to_vec();
            for (kind, dst) in [("m", &mut first), ("v", &mut second)] {
                let key = format!("{prefix}{kind}.{name}");
                match tensors.get(&key) {
                    Some(t) if t.dims() == dims.as_slice() => dst.push(t.to_dtype(store.dtype())?),
                    _ => missing.push(key),
                }
            }
        }
        if !missing.is_empty() {
            return Err(Error::ConfigMismatch(missing));
        }
        self.state = AdamState { step, first, second };
        Ok(())
    }
}
