//! Heavy-ball SGD with decoupled weight decay and a warmup + floored cosine schedule.

use serde::{Deserialize, Serialize};

use super::{NetworkParams, ParameterGradients, TensorKind};
use crate::error::{Error, Result};

/// Hyperparameters as they appear in a training config.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    /// Learning rate for a batch of 256; scaled linearly with the actual batch size.
    pub base_lr: f64,
    pub weight_decay: f64,
    /// Heavy-ball coefficient.
    pub momentum: f64,
    pub warmup_epochs: usize,
    pub min_lr_fraction: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { base_lr: 0.3, weight_decay: 1e-4, momentum: 0.9, warmup_epochs: 2, min_lr_fraction: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    /// Peak learning rate reached at the end of warmup.
    pub learning_rate_base: f64,
    pub weight_decay: f64,
    pub momentum_sgd: f64,
    pub step: u64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub min_lr_fraction: f64,
    velocity: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(learning_rate_base: f64, weight_decay: f64, momentum_sgd: f64, warmup_steps: u64, total_steps: u64, min_lr_fraction: f64) -> Self {
        Self {
            learning_rate_base,
            weight_decay,
            momentum_sgd,
            step: 0,
            warmup_steps,
            total_steps,
            min_lr_fraction,
            velocity: Vec::new(),
        }
    }

    /// Applies the linear scaling rule `lr = base_lr × batch / 256`.
    pub fn from_config(cfg: &OptimizerConfig, batch_size: usize, steps_per_epoch: u64, epochs: u64) -> Self {
        Self::new(
            cfg.base_lr * batch_size as f64 / 256.0,
            cfg.weight_decay,
            cfg.momentum,
            cfg.warmup_epochs as u64 * steps_per_epoch,
            epochs * steps_per_epoch,
            cfg.min_lr_fraction,
        )
    }

    /// Learning rate used at `step`.
    ///
    /// Linear ramp from the floor to the peak over the warmup, then a half cosine
    /// from the peak down to `min_lr_fraction × peak` at `total_steps`, flat after.
    /// The ramp starts at the floor so the rate never drops below it.
    pub fn learning_rate_at(&self, step: u64) -> f64 {
        let peak = self.learning_rate_base;
        let floor = self.min_lr_fraction * peak;
        if step < self.warmup_steps {
            return floor + (peak - floor) * step as f64 / self.warmup_steps as f64;
        }
        if step >= self.total_steps {
            return if self.total_steps <= self.warmup_steps { peak } else { floor };
        }
        let span = (self.total_steps - self.warmup_steps) as f64;
        let progress = (step - self.warmup_steps) as f64 / span;
        floor + (peak - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate_at(self.step)
    }

    /// One update over parallel tensor lists, then advances the step counter.
    pub fn apply(&mut self, params: &mut [(TensorKind, &mut [f64])], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::ShapeMismatch(format!("{} parameter tensors, {} gradients", params.len(), grads.len())));
        }
        for ((_, p), g) in params.iter().zip(grads) {
            if p.len() != g.len() {
                return Err(Error::ShapeMismatch(format!("tensor of {} values got a gradient of {}", p.len(), g.len())));
            }
        }
        if self.velocity.is_empty() {
            self.velocity = grads.iter().map(|g| vec![0.0; g.len()]).collect();
        } else if self.velocity.len() != grads.len() || self.velocity.iter().zip(grads).any(|(v, g)| v.len() != g.len()) {
            return Err(Error::ShapeMismatch("optimizer state was built for different parameters".into()));
        }

        let lr = self.learning_rate();
        for (((kind, p), g), v) in params.iter_mut().zip(grads).zip(self.velocity.iter_mut()) {
            let decay = if *kind == TensorKind::Weight { 1.0 - lr * self.weight_decay } else { 1.0 };
            for ((pi, gi), vi) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                *vi = self.momentum_sgd * *vi + gi;
                *pi = decay * *pi - lr * *vi;
            }
        }
        self.step += 1;
        Ok(())
    }

    /// Raw velocity buffers, for checkpointing.
    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    pub fn set_velocity(&mut self, velocity: Vec<Vec<f64>>) {
        self.velocity = velocity;
    }
}

/// SGD step on a network, optionally together with extra tensors (e.g. prototypes).
pub fn sgd_step(
    params: &mut NetworkParams,
    grads: &ParameterGradients,
    extra: Option<(&mut [f64], &[f64])>,
    opt: &mut OptimizerState,
) -> Result<()> {
    let grad_tensors: Vec<&[f64]> = grads.tensors().into_iter().map(|(_, t)| t).collect();
    let generation = params.generation;
    let mut tensors = params.tensors_mut();
    let mut all_grads = grad_tensors;
    if let Some((p, g)) = extra {
        tensors.push((TensorKind::Weight, p));
        all_grads.push(g);
    }
    opt.apply(&mut tensors, &all_grads)?;
    drop(tensors);
    params.generation = generation + 1;
    Ok(())
}
