//! Minimal differentiable building blocks on top of `candle_core`.
//!
//! Parameters live in a [`ParamStore`]; layers only hold [`ParamId`]s and
//! read their tensors from a [`Weights`] view at call time. A live view lets
//! gradients reach the store's variables, a frozen view detaches them, which
//! is how one network is evaluated inside another network's loss without
//! receiving gradients.

mod adam;
mod layers;
mod ops;
mod params;
mod sampler;

pub use adam::{Adam, AdamConfig, AdamState};
pub use layers::{ConvDecoder, ConvEncoder, GruCell, Linear, Mlp};
pub use ops::{elu, log_softmax, sigmoid, softmax, softplus};
pub use params::{Init, ParamId, ParamStore, Weights};
pub use sampler::{Sampler, Tape};
