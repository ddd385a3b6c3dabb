use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

/// Stop-gradient values captured during one forward pass.
///
/// Replaying a tape substitutes the recorded one-hot samples and detached
/// probabilities, so a perturbed forward pass is the smooth surrogate whose
/// derivative is exactly the straight-through gradient. Finite differences
/// over a replayed tape therefore check straight-through gradients.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    entries: Vec<(Tensor, Tensor)>,
}

impl Tape {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug)]
enum Mode {
    Off,
    Record(Tape),
    Replay(Tape, usize),
}

/// Seeded source of all randomness consumed by the model and the actor.
#[derive(Debug)]
pub struct Sampler {
    rng: ChaCha8Rng,
    mode: Mode,
}

impl Sampler {
    pub fn seeded(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), mode: Mode::Off }
    }

    pub fn recording(seed: u64) -> Self {
        Self { mode: Mode::Record(Tape::default()), ..Self::seeded(seed) }
    }

    pub fn replaying(seed: u64, tape: Tape) -> Self {
        Self { mode: Mode::Replay(tape, 0), ..Self::seeded(seed) }
    }

    /// Recorded tape; empty unless constructed with [`Sampler::recording`].
    pub fn into_tape(self) -> Tape {
        match self.mode {
            Mode::Record(t) | Mode::Replay(t, _) => t,
            Mode::Off => Tape::default(),
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn next_seed(&mut self) -> u64 {
        self.rng.random()
    }

    /// Standard-normal tensor of the given shape and dtype.
    pub fn normal(&mut self, shape: &[usize], dtype: DType, device: &Device) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let v: Vec<f64> = (0..n).map(|_| self.rng.sample(StandardNormal)).collect();
        Ok(Tensor::from_vec(v, shape, device)?.to_dtype(dtype)?)
    }

    /// Draws one class per row of `probs` (last dimension = classes) and
    /// returns the straight-through sample `onehot + probs - sg(probs)`.
    pub fn categorical_st(&mut self, probs: &Tensor) -> Result<Tensor> {
        let dims = probs.dims().to_vec();
        let classes = *dims.last().ok_or_else(|| Error::argument("probs must have a class dimension"))?;
        let host: Vec<f64> = probs.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?;
        let mut onehot = vec![0.0f64; host.len()];
        for (row, out) in host.chunks(classes).zip(onehot.chunks_mut(classes)) {
            let u: f64 = self.rng.random();
            let mut acc = 0.0;
            let mut pick = classes - 1;
            for (k, p) in row.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = k;
                    break;
                }
            }
            out[pick] = 1.0;
        }
        let onehot = Tensor::from_vec(onehot, dims.as_slice(), probs.device())?.to_dtype(probs.dtype())?;
        let (onehot, frozen) = match &mut self.mode {
            Mode::Off => (onehot, probs.detach()),
            Mode::Record(tape) => {
                tape.entries.push((onehot.clone(), probs.detach()));
                (onehot, probs.detach())
            }
            Mode::Replay(tape, cursor) => {
                let entry = tape
                    .entries
                    .get(*cursor)
                    .cloned()
                    .ok_or_else(|| Error::argument("replayed tape is shorter than the forward pass"))?;
                *cursor += 1;
                entry
            }
        };
        // the bracketed difference is exactly zero unless a tape is replayed
        Ok((onehot + (probs - frozen)?)?)
    }
}
