use candle_core::DType;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldModelConfig {
    /// Side length of observation and mask images.
    pub image_size: usize,
    /// Deterministic state size.
    pub deter: usize,
    /// Number of categorical groups in the stochastic state.
    pub groups: usize,
    /// Classes per group.
    pub classes: usize,
    /// Filtered feature size.
    pub filter_dim: usize,
    /// Hidden width of every MLP.
    pub hidden: usize,
    /// Channels of the first convolution; doubled at every stage.
    pub cnn_depth: usize,
    pub beta: f64,
    /// Mix `α·KL(sg(q)‖p) + (1-α)·KL(q‖sg(p))` with `α = kl_balance_mix`.
    pub kl_balancing: bool,
    pub kl_balance_mix: f64,
    /// Per-step lower bound on the KL term, in nats. `0` disables it.
    pub free_nats: f64,
    /// Rewards are regressed in units of `reward * reward_scale`.
    pub reward_scale: f64,
    pub lr: f64,
    pub grad_clip: f64,
    pub precision: Precision,
}

impl Default for WorldModelConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            deter: 256,
            groups: 16,
            classes: 16,
            filter_dim: 256,
            hidden: 256,
            cnn_depth: 16,
            beta: 1.0,
            kl_balancing: false,
            kl_balance_mix: 0.8,
            free_nats: 0.0,
            reward_scale: 0.1,
            lr: 3e-5,
            grad_clip: 100.0,
            precision: Precision::F32,
        }
    }
}

impl WorldModelConfig {
    /// Full-size settings: 128×128 images, 2048-d deterministic state and
    /// 32 groups of 32 classes.
    pub fn paper() -> Self {
        Self {
            image_size: 128,
            deter: 2048,
            groups: 32,
            classes: 32,
            filter_dim: 1024,
            hidden: 1024,
            cnn_depth: 48,
            ..Self::default()
        }
    }

    /// Miniature double-precision model for gradient checks.
    pub fn gradcheck() -> Self {
        Self {
            image_size: 8,
            deter: 8,
            groups: 2,
            classes: 3,
            filter_dim: 6,
            hidden: 8,
            cnn_depth: 2,
            precision: Precision::F64,
            ..Self::default()
        }
    }

    pub fn stoch_dim(&self) -> usize {
        self.groups * self.classes
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("deter", self.deter),
            ("groups", self.groups),
            ("classes", self.classes),
            ("filter_dim", self.filter_dim),
            ("hidden", self.hidden),
            ("cnn_depth", self.cnn_depth),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::config(format!("model.{name} must be >= 1")));
            }
        }
        if self.image_size < 8 || !self.image_size.is_power_of_two() {
            return Err(Error::config("model.image_size must be a power of two >= 8"));
        }
        if !(self.beta >= 0.0) || !(self.free_nats >= 0.0) || !(self.reward_scale > 0.0) {
            return Err(Error::config("model.beta and model.free_nats must be >= 0, reward_scale > 0"));
        }
        if !(0.0..=1.0).contains(&self.kl_balance_mix) {
            return Err(Error::config("model.kl_balance_mix must lie in [0, 1]"));
        }
        if !(self.lr > 0.0) || !(self.grad_clip > 0.0) {
            return Err(Error::config("model.lr and model.grad_clip must be > 0"));
        }
        Ok(())
    }
}
