//! Adam optimizer.

use alloc::vec;
use alloc::vec::Vec;

use super::params::{Gradients, NetworkParams};
use crate::math::sqrt;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates, one per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &NetworkParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.values.iter().map(|p| vec![0.0; p.len()]).collect();
        AdamState { m: zeros.clone(), v: zeros, step: 0 }
    }

    pub fn step(&mut self, params: &mut NetworkParams, grads: &Gradients, cfg: &AdamConfig) -> Result<()> {
        if grads.values.len() != params.values.len() || self.m.len() != params.values.len() {
            return Err(Error::Shape("optimizer state does not match the parameters".into()));
        }
        if !grads.all_finite() {
            return Err(Error::NonFinite("gradients".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - libm::pow(cfg.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(cfg.beta2, t as f64);
        let values = params.values_mut();
        for (((p, g), m), v) in values.iter_mut().zip(&grads.values).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                p[i] -= cfg.lr * (m[i] / bc1) / (sqrt(v[i] / bc2) + cfg.eps);
            }
        }
        Ok(())
    }
}
