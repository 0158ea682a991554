use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::OptimizerState;
use crate::nn::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub state: OptimizerState<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, n_params: usize, lr: f64) -> Self {
        Self {
            config,
            state: OptimizerState {
                step: 0,
                lr,
                first_moment: vec![T::zero(); n_params],
                second_moment: vec![T::zero(); n_params],
            },
        }
    }

    pub fn from_state(config: AdamConfig, state: OptimizerState<T>) -> Self {
        Self { config, state }
    }

    pub fn lr(&self) -> f64 {
        self.state.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.state.lr = lr;
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T]) -> Result<()> {
        let s = &mut self.state;
        if params.len() != grads.len() || params.len() != s.first_moment.len() {
            return Err(Error::shape(format!(
                "optimizer holds {} moments, got {} parameters and {} gradients",
                s.first_moment.len(),
                params.len(),
                grads.len()
            )));
        }
        s.step += 1;
        let c = self.config;
        let t = s.step as i32;
        let bias1 = 1.0 - c.beta1.powi(t);
        let bias2 = 1.0 - c.beta2.powi(t);
        let step_size = T::of(s.lr * bias2.sqrt() / bias1);
        let eps_hat = T::of(c.eps * bias2.sqrt());
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        for i in 0..params.len() {
            let g = grads[i];
            let m = b1 * s.first_moment[i] + one_b1 * g;
            let v = b2 * s.second_moment[i] + one_b2 * g * g;
            s.first_moment[i] = m;
            s.second_moment[i] = v;
            params[i] -= step_size * m / (v.sqrt() + eps_hat);
        }
        Ok(())
    }
}

pub fn global_norm<T: Real>(grads: &[T]) -> f64 {
    grads.iter().map(|g| g.f64() * g.f64()).sum::<f64>().sqrt()
}

/// Rescale so the global L2 norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut [T], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm.is_finite() {
        let scale = T::of(max_norm / norm);
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
    norm
}

/// Multiply the learning rate by `factor` once `patience` consecutive
/// observations fail to improve on the best so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub best: f64,
    pub bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize) -> Self {
        Self {
            lr,
            factor,
            patience,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Record a loss; returns whether it improved on the best.
    pub fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.bad_epochs = 0;
            return true;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience {
            self.lr *= self.factor;
            self.bad_epochs = 0;
        }
        false
    }
}
