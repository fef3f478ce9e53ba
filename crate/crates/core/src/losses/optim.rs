//! Momentum SGD with decoupled weight decay and a cosine schedule.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    Constant,
    /// Cosine decay from the base rate to zero over `total_steps`.
    Cosine { total_steps: usize },
}

/// `lr0 · ½(1 + cos(π·step/total))`, clamped to zero past the end.
pub fn cosine_lr(lr0: f64, step: usize, total: usize) -> f64 {
    if total == 0 || step >= total {
        return if total == 0 { lr0 } else { 0.0 };
    }
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: Schedule,
    step: usize,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64, schedule: Schedule) -> Result<Self> {
        if !(lr >= 0.0 && momentum >= 0.0 && weight_decay >= 0.0) {
            return Err(Error::Config("optimizer hyperparameters must be nonnegative".into()));
        }
        Ok(Sgd {
            lr,
            momentum,
            weight_decay,
            schedule,
            step: 0,
            velocity: Vec::new(),
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        match self.schedule {
            Schedule::Constant => self.lr,
            Schedule::Cosine { total_steps } => cosine_lr(self.lr, self.step, total_steps),
        }
    }

    /// `v ← μv + g`, then `w ← w − lr_t (v + λw)`.
    pub fn step(&mut self, weights: &mut [f64], grad: &[f64]) -> Result<()> {
        if grad.len() != weights.len() {
            return Err(Error::Argument("gradient and weights differ in size".into()));
        }
        if self.velocity.len() != weights.len() {
            self.velocity = vec![0.0; weights.len()];
        }
        let lr = self.current_lr();
        for ((w, v), g) in weights.iter_mut().zip(&mut self.velocity).zip(grad) {
            *v = self.momentum * *v + g;
            *w -= lr * (*v + self.weight_decay * *w);
        }
        self.step += 1;
        Ok(())
    }
}
