//! Adam with bias-corrected moment estimates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    step: u64,
}

impl<T: Scalar> Adam<T> {
    /// State for parameter tensors with the given element counts.
    pub fn new(config: AdamConfig, lens: &[usize]) -> Self {
        Self {
            config,
            first: lens.iter().map(|&n| vec![T::zero(); n]).collect(),
            second: lens.iter().map(|&n| vec![T::zero(); n]).collect(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update `p -= lr · m̂ / (√v̂ + eps)`.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[Vec<T>]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::dims(
                format!("{} tensors", self.first.len()),
                format!("{} params / {} grads", params.len(), grads.len()),
            ));
        }
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.first[k].len() || g.len() != self.first[k].len() {
                return Err(Error::dims(
                    format!("tensor {k} with {} elements", self.first[k].len()),
                    format!("{} params / {} grads", p.len(), g.len()),
                ));
            }
        }
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let one = T::one();
        let t = self.step as i32;
        let bc1 = one - T::of(c.beta1.powi(t));
        let bc2 = one - T::of(c.beta2.powi(t));
        let (lr, eps) = (T::of(c.learning_rate), T::of(c.epsilon));
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Free-function form of [`Adam::step`].
pub fn adam_step<T: Scalar>(state: &mut Adam<T>, params: &mut [&mut [T]], grads: &[Vec<T>]) -> Result<()> {
    state.step(params, grads)
}
