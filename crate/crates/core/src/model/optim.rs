//! Adam with bias correction and decoupled weight decay.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::params::{Grads, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Linear warmup over the first `warmup_frac` of `total_steps`, then linear decay to 0.
    WarmupLinear { total_steps: usize, warmup_frac: f64 },
}

impl LrSchedule {
    /// Multiplier for 1-based step `t`.
    pub fn factor(&self, t: usize) -> f64 {
        match *self {
            LrSchedule::Constant => 1.0,
            LrSchedule::WarmupLinear {
                total_steps,
                warmup_frac,
            } => {
                let total = total_steps.max(1) as f64;
                let warmup = (warmup_frac * total).ceil();
                let t = t as f64;
                if t <= warmup {
                    t / warmup.max(1.0)
                } else {
                    ((total - t) / (total - warmup).max(1.0)).max(0.0)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: OptimizerConfig,
    pub schedule: LrSchedule,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    step: usize,
}

impl AdamW {
    pub fn new(params: &ModelParams, config: OptimizerConfig, schedule: LrSchedule) -> Self {
        let zeros = || {
            params
                .tensors
                .iter()
                .map(|t| Array2::zeros(t.value.raw_dim()))
                .collect::<Vec<_>>()
        };
        AdamW {
            config,
            schedule,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Learning rate used by the next step.
    pub fn next_lr(&self) -> f64 {
        self.config.lr * self.schedule.factor(self.step + 1)
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &Grads) {
        self.step += 1;
        let c = self.config;
        let lr = c.lr * self.schedule.factor(self.step);
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (((t, g), m), v) in params
            .tensors
            .iter_mut()
            .zip(&grads.tensors)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let decay = if t.kind.decays() {
                1.0 - lr * c.weight_decay
            } else {
                1.0
            };
            Zip::from(&mut t.value)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                    let update = (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
                    *p = *p * decay - lr * update;
                });
        }
    }
}
