use std::collections::BTreeMap;
use std::hash::{DefaultHasher, Hasher};

use candle_core::backprop::GradStore;
use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named trainable tensors of one network, in registration order.
#[derive(Debug)]
pub struct ParamStore {
    dtype: DType,
    device: Device,
    names: Vec<String>,
    vars: Vec<Var>,
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        Self { dtype, device: Device::Cpu, names: Vec::new(), vars: Vec::new() }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.vars.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn var(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn num_elements(&self) -> usize {
        self.vars.iter().map(|v| v.elem_count()).sum()
    }

    fn add(&mut self, name: String, values: Vec<f64>, shape: &[usize]) -> Result<ParamId> {
        if self.names.contains(&name) {
            return Err(Error::argument(format!("duplicate parameter name '{name}'")));
        }
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        self.names.push(name);
        self.vars.push(Var::from_tensor(&t)?);
        Ok(ParamId(self.vars.len() - 1))
    }

    /// View whose tensors are the variables themselves; gradients flow back.
    pub fn live(&self) -> Weights {
        Weights(self.vars.iter().map(|v| v.as_tensor().clone()).collect())
    }

    /// Detached view: usable inside another loss without producing gradients here.
    pub fn frozen(&self) -> Weights {
        Weights(self.vars.iter().map(|v| v.as_tensor().detach()).collect())
    }

    /// Deep copy of the current values, detached from future updates.
    pub fn snapshot(&self) -> Result<Weights> {
        let tensors = self
            .vars
            .iter()
            .map(|v| v.as_tensor().copy().map(|t| t.detach()))
            .collect::<candle_core::Result<Vec<_>>>()?;
        Ok(Weights(tensors))
    }

    /// Per-parameter gradients from a backward pass; `None` where no gradient reached.
    pub fn grads(&self, store: &GradStore) -> Vec<Option<Tensor>> {
        self.vars.iter().map(|v| store.get(v).cloned()).collect()
    }

    pub fn values(&self, id: ParamId) -> Result<Vec<f64>> {
        Ok(self.vars[id.0].as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1()?)
    }

    pub fn set_values(&self, id: ParamId, values: Vec<f64>) -> Result<()> {
        let var = &self.vars[id.0];
        let t = Tensor::from_vec(values, var.shape(), &self.device)?.to_dtype(self.dtype)?;
        var.set(&t)?;
        Ok(())
    }

    /// Order-sensitive hash over names, shapes and exact values.
    pub fn checksum(&self) -> Result<u64> {
        let mut h = DefaultHasher::new();
        for (name, id) in self.names.iter().zip(self.ids()) {
            h.write(name.as_bytes());
            for &d in self.vars[id.0].dims() {
                h.write_usize(d);
            }
            for v in self.values(id)? {
                h.write_u64(v.to_bits());
            }
        }
        Ok(h.finish())
    }

    pub fn all_finite(&self) -> Result<bool> {
        for id in self.ids() {
            if self.values(id)?.iter().any(|v| !v.is_finite()) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn named_tensors(&self, prefix: &str) -> BTreeMap<String, Tensor> {
        self.names
            .iter()
            .zip(&self.vars)
            .map(|(n, v)| (format!("{prefix}{n}"), v.as_tensor().clone()))
            .collect()
    }

    /// Overwrites every parameter from `tensors[prefix + name]`. Missing names
    /// or shape mismatches are reported together.
    pub fn load_named(&self, prefix: &str, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        let mut problems = Vec::new();
        for (name, var) in self.names.iter().zip(&self.vars) {
            let key = format!("{prefix}{name}");
            match tensors.get(&key) {
                None => problems.push(format!("{key} (missing)")),
                Some(t) if t.dims() != var.dims() => {
                    problems.push(format!("{key} (shape {:?} != {:?})", t.dims(), var.dims()))
                }
                Some(_) => {}
            }
        }
        if !problems.is_empty() {
            return Err(Error::ConfigMismatch(problems));
        }
        for (name, var) in self.names.iter().zip(&self.vars) {
            let t = tensors[&format!("{prefix}{name}")].to_dtype(self.dtype)?;
            var.set(&t)?;
        }
        Ok(())
    }
}

/// Tensors aligned with a [`ParamStore`]'s parameter ids.
#[derive(Clone, Debug)]
pub struct Weights(Vec<Tensor>);

impl Weights {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.0[id.0]
    }
}

/// Registers freshly initialized parameters under a name prefix.
pub struct Init<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    prefix: String,
}

impl<'a> Init<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        Self { store, rng, prefix: String::new() }
    }

    /// Child initializer whose names are prefixed with `name.`.
    pub fn sub(&mut self, name: &str) -> Init<'_> {
        Init {
            store: self.store,
            rng: self.rng,
            prefix: format!("{}{name}.", self.prefix),
        }
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn uniform(&mut self, name: &str, shape: &[usize], fan_in: usize) -> Result<ParamId> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let values = (0..n).map(|_| self.rng.random_range(-bound..bound)).collect();
        self.store.add(format!("{}{name}", self.prefix), values, shape)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64) -> Result<ParamId> {
        let n = shape.iter().product();
        self.store.add(format!("{}{name}", self.prefix), vec![value; n], shape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn store() -> ParamStore {
        let mut s = ParamStore::new(DType::F64);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut init = Init::new(&mut s, &mut rng);
        let mut enc = init.sub("enc");
        enc.uniform("w", &[3, 2], 3).unwrap();
        enc.constant("b", &[2], 0.0).unwrap();
        s
    }

    #[test]
    fn prefixed_names_and_checksum() {
        let s = store();
        assert_eq!(s.names(), ["enc.w", "enc.b"]);
        let before = s.checksum().unwrap();
        assert_eq!(before, store().checksum().unwrap());
        s.set_values(s.id_of("enc.b").unwrap(), vec![0.0, 1e-12]).unwrap();
        assert_ne!(before, s.checksum().unwrap());
    }

    #[test]
    fn frozen_view_produces_no_gradient() {
        let s = store();
        let w = s.id_of("enc.w").unwrap();
        let x = Tensor::ones((1, 3), DType::F64, &Device::Cpu).unwrap();
        let live = x.matmul(s.live().get(w)).unwrap().sum_all().unwrap();
        assert!(s.grads(&live.backward().unwrap())[0].is_some());
        let frozen = x.matmul(s.frozen().get(w)).unwrap().sum_all().unwrap();
        assert!(s.grads(&frozen.backward().unwrap())[0].is_none());
    }

    #[test]
    fn load_named_reports_all_problems() {
        let s = store();
        let mut map = s.named_tensors("p.");
        map.remove("p.enc.b");
        map.insert("p.enc.w".into(), Tensor::zeros((2, 2), DType::F64, &Device::Cpu).unwrap());
        match s.load_named("p.", &map) {
            Err(Error::ConfigMismatch(keys)) => assert_eq!(keys.len(), 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
