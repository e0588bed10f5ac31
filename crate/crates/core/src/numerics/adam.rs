use std::collections::BTreeMap;

use super::params::Parameters;
use super::tensor::Real;
use crate::error::{Error, Result};

/// Adam hyperparameters. Weight decay is added to the gradient before the
/// moment update (L2 coupling).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

/// Per-parameter first and second moments plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub first: BTreeMap<String, Vec<T>>,
    pub second: BTreeMap<String, Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    /// One bias-corrected Adam update of every parameter in `params`.
    pub fn step(&mut self, params: &mut Parameters<T>, grads: &BTreeMap<String, Vec<T>>) -> Result<()> {
        if let Some(name) = params.names().find(|n| !grads.contains_key(*n)) {
            return Err(Error::MissingGrad(name.to_string()));
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let wd = T::of(c.weight_decay);
        let eps = T::of(c.eps);
        let bc1 = T::of(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = T::of(1.0 - c.beta2.powi(self.step as i32));
        let lr = T::of(c.lr);
        for (name, p) in params.iter_mut() {
            let g = &grads[name];
            if g.len() != p.len() {
                return Err(Error::Dimension {
                    op: "adam",
                    lhs: p.shape().to_vec(),
                    rhs: vec![g.len()],
                });
            }
            let m = self.first.entry(name.clone()).or_insert_with(|| vec![T::zero(); g.len()]);
            let v = self.second.entry(name.clone()).or_insert_with(|| vec![T::zero(); g.len()]);
            for (k, w) in p.data_mut().iter_mut().enumerate() {
                let gk = g[k] + wd * *w;
                m[k] = b1 * m[k] + (T::one() - b1) * gk;
                v[k] = b2 * v[k] + (T::one() - b2) * gk * gk;
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
