use candle_core::Tensor;

use super::ops::{elu, sigmoid};
use super::params::{Init, ParamId, Weights};
use crate::{Error, Result};

/// Affine map `x·W + b` with `W` stored as `(in, out)`.
#[derive(Clone, Debug)]
pub struct Linear {
    weight: ParamId,
    bias: ParamId,
    in_dim: usize,
    out_dim: usize,
}

impl Linear {
    pub fn new(init: &mut Init, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        let mut p = init.sub(name);
        Ok(Self {
            weight: p.uniform("weight", &[in_dim, out_dim], in_dim)?,
            bias: p.constant("bias", &[out_dim], 0.0)?,
            in_dim,
            out_dim,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn forward(&self, w: &Weights, x: &Tensor) -> Result<Tensor> {
        let (_, d) = x.dims2()?;
        if d != self.in_dim {
            return Err(Error::argument(format!("linear expects {} inputs, got {d}", self.in_dim)));
        }
        Ok(x.matmul(w.get(self.weight))?.broadcast_add(w.get(self.bias))?)
    }
}

/// Feed-forward stack with ELU between layers and a linear output.
#[derive(Clone, Debug)]
pub struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(init: &mut Init, name: &str, in_dim: usize, hidden: &[usize], out_dim: usize) -> Result<Self> {
        let mut p = init.sub(name);
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = in_dim;
        for (i, &h) in hidden.iter().chain(std::iter::once(&out_dim)).enumerate() {
            layers.push(Linear::new(&mut p, &format!("l{i}"), prev, h)?);
            prev = h;
        }
        Ok(Self { layers })
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map(Linear::out_dim).unwrap_or(0)
    }

    pub fn forward(&self, w: &Weights, x: &Tensor) -> Result<Tensor> {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(w, &h)?;
            if i < last {
                h = elu(&h)?;
            }
        }
        Ok(h)
    }
}

/// Number of stride-2 stages that take `size` down to 4×4.
fn stages(size: usize) -> Result<usize> {
    if size < 8 || !size.is_power_of_two() {
        return Err(Error::config(format!("image size must be a power of two >= 8, got {size}")));
    }
    Ok((size / 4).trailing_zeros() as usize)
}

/// Strided 4×4 convolutions halving resolution down to 4×4, then flattened.
#[derive(Clone, Debug)]
pub struct ConvEncoder {
    convs: Vec<(ParamId, ParamId)>,
    out_dim: usize,
}

impl ConvEncoder {
    pub fn new(init: &mut Init, name: &str, image_size: usize, depth: usize) -> Result<Self> {
        let mut p = init.sub(name);
        let mut convs = Vec::new();
        let mut in_ch = 3;
        let mut out_ch = depth;
        for i in 0..stages(image_size)? {
            let w = p.uniform(&format!("conv{i}.weight"), &[out_ch, in_ch, 4, 4], in_ch * 16)?;
            let b = p.constant(&format!("conv{i}.bias"), &[out_ch], 0.0)?;
            convs.push((w, b));
            in_ch = out_ch;
            out_ch *= 2;
        }
        Ok(Self { convs, out_dim: in_ch * 16 })
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// `images`: `(N, 3, H, W)` → `(N, out_dim)`.
    pub fn forward(&self, w: &Weights, images: &Tensor) -> Result<Tensor> {
        let n = images.dim(0)?;
        let mut h = images.clone();
        for &(wt, b) in &self.convs {
            let bias = w.get(b).reshape((1, (), 1, 1))?;
            h = elu(&h.conv2d(w.get(wt), 1, 2, 1, 1)?.broadcast_add(&bias)?)?;
        }
        Ok(h.reshape((n, self.out_dim))?)
    }
}

/// Linear projection to a 4×4 feature map followed by stride-2 transposed
/// convolutions up to `(N, 3, H, W)`.
#[derive(Clone, Debug)]
pub struct ConvDecoder {
    project: Linear,
    deconvs: Vec<(ParamId, ParamId)>,
    base_channels: usize,
}

impl ConvDecoder {
    pub fn new(init: &mut Init, name: &str, in_dim: usize, image_size: usize, depth: usize) -> Result<Self> {
        let mut p = init.sub(name);
        let n = stages(image_size)?;
        let base_channels = depth << (n - 1);
        let project = Linear::new(&mut p, "project", in_dim, base_channels * 16)?;
        let mut deconvs = Vec::new();
        let mut in_ch = base_channels;
        for i in 0..n {
            let out_ch = if i + 1 == n { 3 } else { in_ch / 2 };
            // transposed-conv weights are laid out (in, out, k, k)
            let w = p.uniform(&format!("deconv{i}.weight"), &[in_ch, out_ch, 4, 4], in_ch * 4)?;
            let b = p.constant(&format!("deconv{i}.bias"), &[out_ch], 0.0)?;
            deconvs.push((w, b));
            in_ch = out_ch;
        }
        Ok(Self { project, deconvs, base_channels })
    }

    pub fn forward(&self, w: &Weights, x: &Tensor) -> Result<Tensor> {
        let n = x.dim(0)?;
        let mut h = elu(&self.project.forward(w, x)?)?.reshape((n, self.base_channels, 4, 4))?;
        let last = self.deconvs.len() - 1;
        for (i, &(wt, b)) in self.deconvs.iter().enumerate() {
            let bias = w.get(b).reshape((1, (), 1, 1))?;
            h = h.conv_transpose2d(w.get(wt), 1, 0, 2, 1)?.broadcast_add(&bias)?;
            if i < last {
                h = elu(&h)?;
            }
        }
        Ok(h)
    }
}

/// Gated recurrent unit.
#[derive(Clone, Debug)]
pub struct GruCell {
    input: Linear,
    hidden: Linear,
    size: usize,
}

impl GruCell {
    pub fn new(init: &mut Init, name: &str, in_dim: usize, size: usize) -> Result<Self> {
        let mut p = init.sub(name);
        Ok(Self {
            input: Linear::new(&mut p, "input", in_dim, 3 * size)?,
            hidden: Linear::new(&mut p, "hidden", size, 3 * size)?,
            size,
        })
    }

    pub fn forward(&self, w: &Weights, x: &Tensor, h: &Tensor) -> Result<Tensor> {
        let d = self.size;
        let gx = self.input.forward(w, x)?;
        let gh = self.hidden.forward(w, h)?;
        let part = |t: &Tensor, k: usize| t.narrow(1, k * d, d);
        let reset = sigmoid(&(part(&gx, 0)? + part(&gh, 0)?)?)?;
        let update = sigmoid(&(part(&gx, 1)? + part(&gh, 1)?)?)?;
        let cand = (part(&gx, 2)? + (reset * part(&gh, 2)?)?)?.tanh()?;
        // h' = (1 - u)·n + u·h
        let keep = (&update * h)?;
        Ok(((update.affine(-1.0, 1.0)? * cand)? + keep)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;
    use candle_core::{DType, Device};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn encoder_decoder_shapes() {
        let mut store = ParamStore::new(DType::F32);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut init = Init::new(&mut store, &mut rng);
        let enc = ConvEncoder::new(&mut init, "enc", 16, 4).unwrap();
        let dec = ConvDecoder::new(&mut init, "dec", 10, 16, 4).unwrap();
        assert_eq!(enc.out_dim(), 8 * 16);
        let w = store.live();
        let x = Tensor::zeros((5, 3, 16, 16), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(enc.forward(&w, &x).unwrap().dims(), &[5, 128]);
        let z = Tensor::zeros((5, 10), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(dec.forward(&w, &z).unwrap().dims(), &[5, 3, 16, 16]);
    }

    #[test]
    fn rejects_odd_image_sizes() {
        let mut store = ParamStore::new(DType::F32);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut init = Init::new(&mut store, &mut rng);
        assert!(ConvEncoder::new(&mut init, "enc", 24, 4).is_err());
        assert!(ConvEncoder::new(&mut init, "enc2", 4, 4).is_err());
    }

    #[test]
    fn gru_keeps_state_when_update_gate_saturates() {
        let mut store = ParamStore::new(DType::F64);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut init = Init::new(&mut store, &mut rng);
        let gru = GruCell::new(&mut init, "gru", 2, 3).unwrap();
        // push the update-gate bias to +inf-ish so h' ≈ h
        let bias = store.id_of("gru.input.bias").unwrap();
        let mut b = store.values(bias).unwrap();
        b[3..6].iter_mut().for_each(|v| *v = 60.0);
        store.set_values(bias, b).unwrap();
        let w = store.live();
        let x = Tensor::new(&[[0.3f64, -0.2]], &Device::Cpu).unwrap();
        let h = Tensor::new(&[[0.5f64, -0.25, 0.1]], &Device::Cpu).unwrap();
        let out = gru.forward(&w, &x, &h).unwrap().to_vec2::<f64>().unwrap();
        for (a, b) in out[0].iter().zip([0.5, -0.25, 0.1]) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
