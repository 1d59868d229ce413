use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::Float;
use crate::error::{ensure, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for every tensor of one [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step_count: u64,
    first_moment: Vec<Vec<Float>>,
    second_moment: Vec<Vec<Float>>,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<Float>> = store
            .iter()
            .map(|(_, p)| vec![0.0; p.tensor.numel()])
            .collect();
        Self {
            config,
            step_count: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self, id: ParamId) -> &[Float] {
        &self.first_moment[id.index()]
    }

    pub fn second_moment(&self, id: ParamId) -> &[Float] {
        &self.second_moment[id.index()]
    }

    /// One bias-corrected Adam update of the `trainable` tensors, reading the
    /// gradients accumulated in the store. Tensors without a gradient, and
    /// tensors outside `trainable`, are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, trainable: &[ParamId]) -> Result<()> {
        ensure!(
            self.first_moment.len() == store.len(),
            "optimizer tracks {} tensors but the store holds {}",
            self.first_moment.len(),
            store.len()
        );
        for &id in trainable {
            ensure!(
                self.first_moment[id.index()].len() == store.get(id).numel(),
                "optimizer moment shape does not match parameter {}",
                store.param(id).name
            );
        }
        self.step_count += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step_count as i32;
        let bc1 = (1.0 - beta1.powi(t)) as Float;
        let bc2 = (1.0 - beta2.powi(t)) as Float;
        let (lr, b1, b2, eps) = (
            learning_rate as Float,
            beta1 as Float,
            beta2 as Float,
            epsilon as Float,
        );

        for &id in trainable {
            let tensor = store.get_mut(id);
            let Some(grad) = tensor.grad().map(|g| g.to_vec()) else {
                continue;
            };
            let m = &mut self.first_moment[id.index()];
            let v = &mut self.second_moment[id.index()];
            for (i, p) in tensor.values_mut().iter_mut().enumerate() {
                let g = grad[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescales the gradients of `ids` so their joint L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(store: &mut ParamStore, ids: &[ParamId], max_norm: Float) -> Float {
    let sq: f64 = ids
        .iter()
        .filter_map(|&id| store.get(id).grad())
        .flat_map(|g| g.iter())
        .map(|&g| (g as f64) * (g as f64))
        .sum();
    let norm = sq.sqrt() as Float;
    if norm > max_norm && norm.is_finite() {
        let factor = max_norm / norm;
        for &id in ids {
            let t = store.get_mut(id);
            if let Some(g) = t
                .grad()
                .map(|g| g.iter().map(|x| x * factor).collect::<Vec<_>>())
            {
                t.zero_grad();
                t.accumulate_grad(&g).expect("same length");
            }
        }
    }
    norm
}
