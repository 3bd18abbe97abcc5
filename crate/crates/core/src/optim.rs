//! AdamW with decoupled weight decay, and learning-rate schedules.

use crate::error::{Error, Result};
use crate::tensor::ParamSet;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    step_count: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(params: &ParamSet, config: AdamWConfig) -> Self {
        let first = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        let second = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Self {
            config,
            step_count: 0,
            first,
            second,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One AdamW update of every parameter that requires grad.
    ///
    /// `p <- p (1 - lr wd) - lr m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, params: &mut ParamSet, lr: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::contract(format!("learning rate must be > 0, got {lr}")));
        }
        if self.first.len() != params.len() {
            return Err(Error::contract(
                "optimizer state does not match the parameter set",
            ));
        }
        for (i, (name, t)) in params.iter().enumerate() {
            if t.requires_grad() && t.grad().is_none() {
                return Err(Error::contract(format!("parameter {name} has no gradient")));
            }
            if self.first[i].len() != t.numel() {
                return Err(Error::contract(format!(
                    "moment buffers for {name} have the wrong length"
                )));
            }
        }
        self.step_count += 1;
        let AdamWConfig {
            beta1,
            beta2,
            epsilon,
            weight_decay,
        } = self.config;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let decay = 1.0 - lr * weight_decay;
        for (i, (_, tensor)) in params.iter_mut().enumerate() {
            if !tensor.requires_grad() {
                continue;
            }
            let grad = tensor.grad().expect("checked above").to_vec();
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (j, p) in tensor.data_mut().iter_mut().enumerate() {
                let g = grad[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *p = *p * decay - lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LrSchedule {
    /// `base_lr * factor` of the last milestone at or before the epoch.
    StepDecay {
        base_lr: f64,
        milestones: Vec<(usize, f64)>,
        total_epochs: usize,
    },
    /// `base_lr * (1 + cos(pi * epoch / total_epochs)) / 2`.
    Cosine { base_lr: f64, total_epochs: usize },
}

impl LrSchedule {
    pub fn total_epochs(&self) -> usize {
        match self {
            LrSchedule::StepDecay { total_epochs, .. } | LrSchedule::Cosine { total_epochs, .. } => {
                *total_epochs
            }
        }
    }

    pub fn lr_at(&self, epoch: usize) -> Result<f64> {
        if epoch > self.total_epochs() {
            return Err(Error::contract(format!(
                "epoch {epoch} outside schedule range 0..={}",
                self.total_epochs()
            )));
        }
        Ok(match self {
            LrSchedule::StepDecay {
                base_lr,
                milestones,
                ..
            } => {
                let factor = milestones
                    .iter()
                    .filter(|(at, _)| *at <= epoch)
                    .map(|&(_, f)| f)
                    .last()
                    .unwrap_or(1.0);
                base_lr * factor
            }
            LrSchedule::Cosine {
                base_lr,
                total_epochs,
            } => {
                let phase = std::f64::consts::PI * epoch as f64 / *total_epochs as f64;
                base_lr * 0.5 * (1.0 + phase.cos())
            }
        })
    }
}
