use alloc::vec::Vec;

use super::ParamSet;
use crate::error::{Error, Result};
use crate::real::Real;
#[allow(unused_imports)]
use num_traits::Float;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamSet<T>) -> Self {
        let zeros = || {
            params
                .tensors()
                .iter()
                .map(|t| alloc::vec![T::zero(); t.numel()])
                .collect()
        };
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Applies one update. Every parameter needs a gradient; a non-finite
    /// gradient aborts the step before anything is modified.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &[Option<Vec<T>>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::invalid("adam_step", "gradient count differs from parameter count"));
        }
        for (i, g) in grads.iter().enumerate() {
            let g = g
                .as_ref()
                .ok_or_else(|| Error::MissingGrad(params.name(i).into()))?;
            if g.len() != params.get(i).numel() {
                return Err(Error::shape("adam_step", params.get(i).shape(), &[g.len()]));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGrad(params.name(i).into()));
            }
        }
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (T::c(c.beta1), T::c(c.beta2));
        let bc1 = T::c(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = T::c(1.0 - c.beta2.powi(self.step as i32));
        let (lr, eps) = (T::c(c.lr), T::c(c.eps));
        let one = T::one();
        for (i, g) in grads.iter().enumerate() {
            let g = g.as_ref().expect("checked above");
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = params.get_mut(i).data_mut();
            for j in 0..p.len() {
                m[j] = b1 * m[j] + (one - b1) * g[j];
                v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                p[j] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}
