use alloc::vec::Vec;

use crate::autodiff::Gradients;
use crate::math;
use crate::models::ParamSet;
use crate::tensor::Tensor;
use crate::{CoreError, Result};

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct OptimConfig {
    pub lr: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: 1e-3,
            weight_decay: 1e-4,
            epochs: 10,
            batch_size: 4,
            seed: 0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(CoreError::InvalidConfig(alloc::format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(CoreError::InvalidConfig(
                "weight decay must be non-negative".into(),
            ));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(CoreError::InvalidConfig(
                "epochs and batch size must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// `lr0 / 2 * (1 + cos(pi * step / total))`, reaching 0 at `total`.
pub fn cosine_lr(step: usize, total: usize, lr0: f64) -> Result<f64> {
    if total == 0 {
        return Err(CoreError::InvalidConfig(
            "cosine schedule needs a positive step count".into(),
        ));
    }
    if step > total {
        return Err(CoreError::InvalidConfig(alloc::format!(
            "step {step} beyond schedule length {total}"
        )));
    }
    Ok(0.5 * lr0 * (1.0 + math::cos(math::PI * step as f64 / total as f64)))
}

/// Adaptive-moment optimizer with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    steps: i32,
}

impl AdamW {
    pub fn new(params: &ParamSet, weight_decay: f64) -> Self {
        let zeros: Vec<Tensor> = params
            .iter()
            .map(|p| Tensor::zeros(p.value.shape()))
            .collect();
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            first: zeros.clone(),
            second: zeros,
            steps: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.steps
    }

    /// One update at learning rate `lr`. Parameters without a gradient are
    /// treated as having a zero gradient.
    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients, lr: f64) {
        self.steps += 1;
        let bc1 = 1.0 - math::powi(self.beta1, self.steps);
        let bc2 = 1.0 - math::powi(self.beta2, self.steps);
        let shrink = 1.0 - lr * self.weight_decay;
        for i in 0..params.len() {
            let g = grads.param(i);
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let p = params.value_mut(i).data_mut();
            for k in 0..p.len() {
                let gk = g.map_or(0.0, |t| t.data()[k]);
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                p[k] = p[k] * shrink - lr * mh / (math::sqrt(vh) + self.eps);
            }
        }
    }
}
