use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::store::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    step: u64,
    first: BTreeMap<String, Tensor<T>>,
    second: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, first: BTreeMap::new(), second: BTreeMap::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update of every parameter in `store`.
    ///
    /// Every parameter must carry a gradient buffer; the update is applied only
    /// after all of them are checked.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if let Some((name, _)) = store.iter().find(|(_, p)| p.grad.is_none()) {
            return Err(Error::MissingGradient(name.to_string()));
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (lit::<T>(c.beta1), lit::<T>(c.beta2));
        let bc1 = lit::<T>(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = lit::<T>(1.0 - c.beta2.powi(self.step as i32));
        let (lr, eps) = (lit::<T>(c.lr), lit::<T>(c.eps));
        let one = T::one();
        for (name, p) in store.iter_mut() {
            let g = p.grad.as_ref().expect("checked above");
            let m = self.first.entry(name.to_string()).or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.second.entry(name.to_string()).or_insert_with(|| Tensor::zeros(g.shape()));
            for (((w, &gi), mi), vi) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w = *w - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
