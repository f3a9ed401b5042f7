use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::util::stable_hash;

/// How a lazily created parameter is filled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    XavierUniform { fan_in: usize, fan_out: usize },
    Uniform(f64),
}

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
}

/// Named parameters and their gradient buffers, iterated in name order.
///
/// Random initialization is keyed on the store seed and the parameter name,
/// so creation order does not affect values.
#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    seed: u64,
    params: BTreeMap<String, Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new(seed: u64) -> Self {
        Self { seed, params: BTreeMap::new() }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        self.params.insert(name.into(), Param { value, grad: None });
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.params.get(name).map(|p| &p.value).ok_or_else(|| Error::UnknownParameter(name.into()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::UnknownParameter(name.into()))
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name).and_then(|p| p.grad.as_ref())
    }

    /// Returns the named parameter, creating it with `init` when absent.
    pub fn get_or_init(&mut self, name: &str, shape: &[usize], init: Init) -> Result<&Tensor<T>> {
        if !self.params.contains_key(name) {
            let value = self.initial_value(name, shape, init);
            self.insert(name, value);
        }
        let t = &self.params[name].value;
        if t.shape() != shape {
            return Err(Error::ShapeMismatch(format!(
                "parameter `{name}` has shape {:?}, requested {shape:?}",
                t.shape()
            )));
        }
        Ok(t)
    }

    fn initial_value(&self, name: &str, shape: &[usize], init: Init) -> Tensor<T> {
        let bound = match init {
            Init::Zeros => return Tensor::zeros(shape),
            Init::XavierUniform { fan_in, fan_out } => (6.0 / (fan_in + fan_out) as f64).sqrt(),
            Init::Uniform(b) => b,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ stable_hash(name.as_bytes()));
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::cast_from(rng.random_range(-bound..=bound))).collect();
        Tensor::from_vec(shape, data).expect("length matches shape")
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    /// Resets every gradient buffer to zeros of the parameter's shape.
    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            match &mut p.grad {
                Some(g) => g.data_mut().iter_mut().for_each(|v| *v = T::zero()),
                None => p.grad = Some(Tensor::zeros(p.value.shape())),
            }
        }
    }

    pub(crate) fn accumulate_grad(&mut self, name: &str, grad: &Tensor<T>) -> Result<()> {
        let p = self.params.get_mut(name).ok_or_else(|| Error::UnknownParameter(name.into()))?;
        if grad.shape() != p.value.shape() {
            return Err(Error::ShapeMismatch(format!("gradient for `{name}` has shape {:?}", grad.shape())));
        }
        match &mut p.grad {
            Some(g) => g.data_mut().iter_mut().zip(grad.data()).for_each(|(a, &b)| *a = *a + b),
            None => p.grad = Some(grad.clone()),
        }
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }
}
