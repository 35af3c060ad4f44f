//! Full-batch gradient descent with optional momentum.
//!
//! Deterministic by construction: no minibatching, no stochastic schedules.
//! The dataset scale makes full-batch updates cheap, and determinism is a
//! hard requirement for reproducible reports.

use crate::error::{Error, Result};
use crate::numeric::Matrix;

/// Shared training-loop knobs.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainParams {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            epochs: 300,
            learning_rate: 0.01,
            momentum: 0.9,
        }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::contract("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::contract("momentum must be in [0, 1)"));
        }
        if self.epochs == 0 {
            return Err(Error::contract("epochs must be >= 1"));
        }
        Ok(())
    }
}

/// SGD state. Velocity buffers are positional: callers must pass parameters
/// in the same order every step.
#[derive(Debug)]
pub struct Sgd {
    learning_rate: f64,
    momentum: f64,
    velocity: Vec<Matrix>,
}

impl Sgd {
    pub fn new(learning_rate: f64, momentum: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            velocity: Vec::new(),
        }
    }

    /// `v <- momentum * v + g; p <- p - lr * v` for each (param, grad) pair.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[&Matrix]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::contract("optimizer params/grads length mismatch"));
        }
        if self.velocity.is_empty() {
            self.velocity = grads
                .iter()
                .map(|g| Matrix::zeros(g.rows(), g.cols()))
                .collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::contract(
                "optimizer was initialized with a different parameter set",
            ));
        }
        for ((param, grad), vel) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            if self.momentum != 0.0 {
                for (v, &g) in vel.data_mut().iter_mut().zip(grad.data()) {
                    *v = self.momentum * *v + g;
                }
                param.axpy(-self.learning_rate, vel)?;
            } else {
                param.axpy(-self.learning_rate, grad)?;
            }
        }
        Ok(())
    }
}
