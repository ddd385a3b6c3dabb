//! Independent oracles shared by the integration tests. Nothing here calls
//! the library routine it is meant to check.

#![allow(dead_code)]

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sem2::envsim::{Action, Image, Observation, SemanticMask, Termination};
use sem2::nn::{ParamId, ParamStore};
use sem2::replay::{Episode, TransitionRecord};

/// Driving reward written out term by term from its definition.
pub fn reward_oracle(v_lon: f64, steer: f64, collision: bool, out_lane: bool, cte: f64) -> f64 {
    let mut r = v_lon - 0.1;
    if collision {
        r -= 200.0;
    }
    if v_lon > 8.0 {
        r -= 10.0;
    }
    if out_lane {
        r -= 1.0;
    }
    r -= 5.0 * steer * steer;
    r -= 0.2 * steer.abs() * v_lon * v_lon;
    r -= 0.2 * cte;
    r
}

/// λ-return as the explicit mixture of n-step returns: weights
/// `(1-λ)λ^(n-1)` for the truncated returns and `λ^(I-t-1)` for the longest.
pub fn lambda_return_oracle(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let i = rewards.len();
    assert_eq!(values.len(), i + 1);
    let n_step = |t: usize, n: usize| {
        let mut g = 0.0;
        for k in 0..n {
            g += gamma.powi(k as i32) * rewards[t + k];
        }
        g + gamma.powi(n as i32) * values[t + n]
    };
    (0..i)
        .map(|t| {
            let longest = i - t;
            let mut acc = 0.0;
            for n in 1..longest {
                acc += (1.0 - lambda) * lambda.powi(n as i32 - 1) * n_step(t, n);
            }
            acc + lambda.powi(longest as i32 - 1) * n_step(t, longest)
        })
        .collect()
}

/// `KL(q ‖ p)` for one categorical pair, in nats.
pub fn categorical_kl(q: &[f64], p: &[f64]) -> f64 {
    q.iter().zip(p).filter(|(qi, _)| **qi > 0.0).map(|(qi, pi)| qi * (qi / pi).ln()).sum()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

pub fn random_image(rng: &mut ChaCha8Rng, size: usize) -> Image {
    Image::from_raw(size, size, (0..size * size * 3).map(|_| rng.random()).collect()).unwrap()
}

/// Episode with random pixels and actions whose rewards encode the step
/// index, so a sequence's contiguity is readable from its rewards.
pub fn indexed_episode(id: u64, len: usize, end: Termination, image: usize, rng: &mut ChaCha8Rng) -> Episode {
    let records = (0..len)
        .map(|i| TransitionRecord {
            observation: Observation(random_image(rng, image)),
            mask: SemanticMask(random_image(rng, image)),
            action: Action::new(rng.random_range(-3.0..3.0), rng.random_range(-0.5..0.5)),
            reward: i as f64,
            termination: if i + 1 == len { end } else { Termination::None },
            episode_id: id,
            step_index: i as u32,
        })
        .collect();
    Episode::new("straight", id, records).unwrap()
}

pub fn blank_episode(id: u64, len: usize, end: Termination) -> Episode {
    let records = (0..len)
        .map(|i| TransitionRecord {
            observation: Observation(Image::zeros(2, 2)),
            mask: SemanticMask(Image::zeros(2, 2)),
            action: Action::ZERO,
            reward: i as f64,
            termination: if i + 1 == len { end } else { Termination::None },
            episode_id: id,
            step_index: i as u32,
        })
        .collect();
    Episode::new("straight", id, records).unwrap()
}

pub fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

pub fn to_vec(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1().unwrap()
}

pub fn tensor(values: Vec<f64>, shape: &[usize]) -> Tensor {
    Tensor::from_vec(values, shape, &Device::Cpu).unwrap()
}

/// Comparison of one parameter tensor's analytic gradient against central
/// differences on up to `per_param` randomly chosen elements.
#[derive(Debug)]
pub struct GradCheck {
    pub name: String,
    pub checked: usize,
    /// `‖a - n‖ / max(‖a‖, ‖n‖)` over the checked elements; zero when both vanish.
    pub rel_err: f64,
}

/// Central finite differences of `f` with respect to parameters of `store`.
/// `analytic` is indexed by parameter id in store order.
pub fn finite_difference_check(
    store: &ParamStore,
    analytic: &[Option<Tensor>],
    ids: &[ParamId],
    per_param: usize,
    eps: f64,
    seed: u64,
    mut f: impl FnMut() -> f64,
) -> Vec<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for &id in ids {
        let values = store.values(id).unwrap();
        let grad = analytic[ids_index(store, id)].as_ref().map(to_vec).unwrap_or_else(|| vec![0.0; values.len()]);
        let mut picks: Vec<usize> = (0..values.len()).collect();
        if picks.len() > per_param {
            for k in 0..per_param {
                let j = rng.random_range(k..picks.len());
                picks.swap(k, j);
            }
            picks.truncate(per_param);
        }
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        for &k in &picks {
            let mut v = values.clone();
            v[k] = values[k] + eps;
            store.set_values(id, v.clone()).unwrap();
            let up = f();
            v[k] = values[k] - eps;
            store.set_values(id, v).unwrap();
            let down = f();
            let numeric = (up - down) / (2.0 * eps);
            diff += (grad[k] - numeric).powi(2);
            na += grad[k].powi(2);
            nn += numeric.powi(2);
        }
        store.set_values(id, values).unwrap();
        let scale = na.sqrt().max(nn.sqrt());
        let rel_err = if scale == 0.0 { 0.0 } else { diff.sqrt() / scale };
        out.push(GradCheck { name: store.name(id).to_string(), checked: picks.len(), rel_err });
    }
    out
}

fn ids_index(store: &ParamStore, id: ParamId) -> usize {
    store.ids().position(|x| x == id).unwrap()
}
