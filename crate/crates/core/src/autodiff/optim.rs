use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_LEARNING_RATE: f64 = 0.0004;
pub const DEFAULT_CLIP_NORM: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: DEFAULT_LEARNING_RATE,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are allocated lazily on the first
/// step for every trainable parameter; frozen parameters are never touched.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    moments: Vec<Option<(Tensor, Tensor)>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// First and second moment of parameter `index`, once it has been stepped.
    pub fn moments(&self, index: usize) -> Option<(&Tensor, &Tensor)> {
        self.moments.get(index)?.as_ref().map(|(m, v)| (m, v))
    }

    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if self.moments.is_empty() {
            self.moments = vec![None; store.len()];
        }
        if self.moments.len() != store.len() {
            return Err(Error::contract(format!(
                "optimizer tracks {} parameters but the store has {}",
                self.moments.len(),
                store.len()
            )));
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bias1 = 1.0 - beta1.powi(self.step as i32);
        let bias2 = 1.0 - beta2.powi(self.step as i32);
        for (param, slot) in store.params_mut().iter_mut().zip(&mut self.moments) {
            if !param.trainable() {
                continue;
            }
            let shape = param.value().shape().to_vec();
            let (m, v) = slot.get_or_insert_with(|| (Tensor::zeros(&shape), Tensor::zeros(&shape)));
            if m.shape() != shape.as_slice() {
                return Err(Error::contract(format!(
                    "parameter {} changed shape from {:?} to {:?}",
                    param.name(),
                    m.shape(),
                    shape
                )));
            }
            let (value, grad) = param.split_mut();
            for (((p, g), m), v) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescales all trainable gradients so their global L2 norm is at most
/// `max_norm`. Returns the factor applied (1.0 when no clipping happened).
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = store.grad_norm();
    if norm <= max_norm || norm == 0.0 {
        return 1.0;
    }
    let factor = max_norm / norm;
    store.scale_grads(factor);
    factor
}
