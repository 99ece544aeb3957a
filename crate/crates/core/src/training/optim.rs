use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::encoder::Params;

/// Linear warmup from 0 to `lr0` over `warmup_steps`, then cosine decay to 0 at
/// `total_steps`.
pub fn lr_schedule(step: usize, total_steps: usize, warmup_steps: usize, lr0: f64) -> f64 {
    let step = step.min(total_steps);
    if step < warmup_steps {
        return lr0 * step as f64 / warmup_steps as f64;
    }
    if total_steps <= warmup_steps {
        return lr0;
    }
    let progress = (step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64;
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Adam with decoupled weight decay. Decay applies to weight matrices only, not to biases
/// or the temperature.
#[derive(Debug, Clone)]
pub struct AdamW {
    config: AdamWConfig,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    decay: Vec<bool>,
    t: i32,
}

impl AdamW {
    pub fn new(params: &Params, config: AdamWConfig) -> Self {
        let tensors = params.tensors();
        Self {
            config,
            m: tensors.iter().map(|(_, t)| Array2::zeros(t.raw_dim())).collect(),
            v: tensors.iter().map(|(_, t)| Array2::zeros(t.raw_dim())).collect(),
            decay: tensors.iter().map(|(n, _)| n.ends_with(".w")).collect(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut Params, grads: &Params, lr: f64) {
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        let grads: Vec<&Array2<f64>> = grads.tensors().into_iter().map(|(_, g)| g).collect();
        for (k, p) in params.tensors_mut().into_iter().enumerate() {
            let g = grads[k];
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            let decay = if self.decay[k] { lr * c.weight_decay } else { 0.0 };
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= decay * *p + lr * m_hat / (v_hat.sqrt() + c.eps);
            });
        }
    }
}

/// What the early stopper decided after an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Stops after `patience` consecutive epochs without a strictly lower validation loss.
/// `None` never stops.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: Option<usize>,
    best: f64,
    best_epoch: Option<usize>,
    stale: usize,
}

impl EarlyStopper {
    pub fn new(patience: Option<usize>) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = Some(epoch);
            self.stale = 0;
            return StopDecision::Improved;
        }
        self.stale += 1;
        match self.patience {
            Some(p) if self.stale >= p => StopDecision::Stop,
            _ => StopDecision::Continue,
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}
