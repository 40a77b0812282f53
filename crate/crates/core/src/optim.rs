//! Adam with an optional cosine learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result};
use crate::hessian::AdamProbe;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
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

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    /// lr · ½(1 + cos(π k / K)) at step k of K.
    #[default]
    Cosine,
}

impl Schedule {
    pub fn lr_at(&self, base: f64, step: usize, total: usize) -> f64 {
        match self {
            Schedule::Constant => base,
            Schedule::Cosine => {
                let frac = step as f64 / total.max(1) as f64;
                base * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

/// Adam state over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub steps: u64,
    last_lr: f64,
}

impl Adam {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            steps: 0,
            last_lr: 0.0,
        }
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        check_dim(self.m.len(), params.len(), "adam parameters")?;
        check_dim(self.m.len(), grads.len(), "adam gradients")?;
        let AdamConfig { beta1, beta2, eps } = self.config;
        self.steps += 1;
        self.last_lr = lr;
        let c1 = 1.0 - beta1.powi(self.steps as i32);
        let c2 = 1.0 - beta2.powi(self.steps as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }

    /// Snapshot of the second-moment state, using the last applied rate.
    pub fn probe(&self) -> AdamProbe {
        AdamProbe {
            second_moment: self.v.clone(),
            step_count: self.steps,
            alpha: self.last_lr,
            eps: self.config.eps,
            beta2: self.config.beta2,
        }
    }
}
