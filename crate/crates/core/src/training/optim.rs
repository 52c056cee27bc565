//! SGD with momentum and decoupled-from-BN weight decay, plus learning-rate
//! schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Param, ParamKind};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    Constant,
    /// Linear warmup over the first 30% of steps, then cosine decay to
    /// `base_lr / 100`.
    OneCycle,
    /// `base_lr · 0.1^⌊epoch/4⌋`.
    Step,
}

impl std::str::FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Schedule::Constant),
            "one-cycle" => Ok(Schedule::OneCycle),
            "step" => Ok(Schedule::Step),
            other => Err(Error::Config(format!(
                "unknown schedule '{other}' (expected constant, one-cycle or step)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub base_lr: f64,
    pub momentum: f64,
    /// Decay coefficient applied to weights when the WD flag is on.
    pub weight_decay: f64,
    pub schedule: Schedule,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            base_lr: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            schedule: Schedule::OneCycle,
            epochs: 10,
            batch_size: 32,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return Err(Error::Config(format!("base_lr must be non-negative, got {}", self.base_lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be at least 2 for batch normalization, got {}",
                self.batch_size
            )));
        }
        Ok(())
    }
}

const WARMUP_FRACTION: f64 = 0.3;
const FINAL_DIVISOR: f64 = 100.0;

/// Learning rate for `step` (0-based, `< total_steps`) within `epoch`.
pub fn lr_at(schedule: Schedule, base_lr: f64, epoch: usize, step: usize, total_steps: usize) -> f64 {
    match schedule {
        Schedule::Constant => base_lr,
        Schedule::Step => base_lr * 0.1f64.powi((epoch / 4) as i32),
        Schedule::OneCycle => {
            let floor = base_lr / FINAL_DIVISOR;
            if total_steps <= 1 {
                return base_lr;
            }
            let last = (total_steps - 1) as f64;
            let warmup = (WARMUP_FRACTION * last).round().max(1.0);
            let s = step as f64;
            if s < warmup {
                floor + (base_lr - floor) * s / warmup
            } else {
                let progress = ((s - warmup) / (last - warmup).max(1.0)).min(1.0);
                floor + 0.5 * (base_lr - floor) * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }
}

/// Momentum buffers for every parameter in model order.
#[derive(Debug, Clone, Default)]
pub struct Sgd<T> {
    velocity: Vec<Tensor<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new() -> Self {
        Self { velocity: Vec::new() }
    }

    /// One update: `v ← μ·v + g + λ·θ` (λ only for weights), `θ ← θ − lr·v`.
    ///
    /// Parameters marked untrainable are skipped entirely.
    pub fn step(
        &mut self,
        params: &mut [Param<'_, T>],
        momentum: f64,
        weight_decay: f64,
        lr: f64,
    ) -> Result<()> {
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::Config(format!(
                "optimizer tracks {} parameters, got {}",
                self.velocity.len(),
                params.len()
            )));
        }
        for p in params.iter() {
            if p.trainable && !p.grad.all_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", p.name)));
            }
        }
        let (mu, lr) = (T::lit(momentum), T::lit(lr));
        for (p, v) in params.iter_mut().zip(&mut self.velocity) {
            if !p.trainable {
                continue;
            }
            if v.shape() != p.value.shape() || p.grad.shape() != p.value.shape() {
                return Err(Error::shape("sgd_step", p.value.shape(), p.grad.shape()));
            }
            let decay = if p.kind == ParamKind::Weight {
                T::lit(weight_decay)
            } else {
                T::zero()
            };
            let values = p.value.data_mut();
            for ((vel, theta), &g) in v.data_mut().iter_mut().zip(values.iter_mut()).zip(p.grad.data()) {
                *vel = mu * *vel + g + decay * *theta;
                *theta -= lr * *vel;
            }
        }
        Ok(())
    }
}
