use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use crate::error::{Error, Result};

/// AdamW with bias-corrected moments and decoupled weight decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// First and second moment buffers, one per parameter tensor.
    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.first, &self.second)
    }

    /// Applies one update from the gradients stored on `params`. Every
    /// trainable tensor must carry a gradient buffer.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        let tensors = params.tensors_mut();
        if let Some((i, _)) = tensors
            .iter()
            .enumerate()
            .find(|(_, t)| t.requires_grad() && t.grad().is_none())
        {
            return Err(Error::contract(format!("parameter #{i} has no gradient")));
        }
        if self.first.is_empty() {
            self.first = tensors.iter().map(|t| vec![0.0; t.numel()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != tensors.len()
            || self.first.iter().zip(tensors.iter()).any(|(m, t)| m.len() != t.numel())
        {
            return Err(Error::contract("optimizer state does not match parameters"));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((tensor, m), v) in tensors.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            if !tensor.requires_grad() {
                continue;
            }
            let grad = tensor.grad().expect("checked above").to_vec();
            for (((p, g), mi), vi) in tensor.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *p -= self.lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * *p);
            }
        }
        Ok(())
    }
}
