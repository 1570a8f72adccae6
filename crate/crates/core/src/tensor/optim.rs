//! Adam with decoupled weight decay, and learning-rate schedules.

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    /// Finetuning defaults: β = (0.9, 0.98), ε = 1e-6, no weight decay.
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.98, epsilon: 1e-6, weight_decay: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub cfg: AdamConfig,
}

impl AdamState {
    pub fn new(numel: usize, cfg: AdamConfig) -> Self {
        AdamState { m: vec![0.0; numel], v: vec![0.0; numel], step: 0, cfg }
    }
}

/// One bias-corrected Adam update. Weight decay is applied to the parameter
/// directly (`p −= lr·wd·p`) before the moment-based step.
pub fn adam_step(param: &mut Tensor, grad: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    let n = param.numel();
    if grad.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::Shape(format!(
            "adam: param {:?}, grad {}, state {}",
            param.shape(),
            grad.len(),
            state.m.len()
        )));
    }
    if lr < 0.0 {
        return Err(Error::Contract(format!("negative learning rate {lr}")));
    }
    let AdamConfig { beta1, beta2, epsilon, weight_decay } = state.cfg;
    state.step += 1;
    let bc1 = 1.0 - beta1.powi(state.step as i32);
    let bc2 = 1.0 - beta2.powi(state.step as i32);
    let p = param.data_mut();
    for i in 0..n {
        let g = grad[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        if weight_decay != 0.0 {
            p[i] -= lr * weight_decay * p[i];
        }
        let mhat = state.m[i] / bc1;
        let vhat = state.v[i] / bc2;
        p[i] -= lr * mhat / (vhat.sqrt() + epsilon);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    InverseSqrt,
    PolyDecay,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub kind: ScheduleKind,
    pub peak_lr: f64,
    pub warmup_steps: u64,
    #[serde(default)]
    pub total_steps: u64,
    #[serde(default)]
    pub end_lr: f64,
    #[serde(default = "one")]
    pub power: f64,
}

fn one() -> f64 {
    1.0
}

impl LrSchedule {
    pub fn inverse_sqrt(peak_lr: f64, warmup_steps: u64) -> Self {
        LrSchedule {
            kind: ScheduleKind::InverseSqrt,
            peak_lr,
            warmup_steps,
            total_steps: 0,
            end_lr: 0.0,
            power: 1.0,
        }
    }

    pub fn poly_decay(peak_lr: f64, warmup_steps: u64, total_steps: u64) -> Self {
        LrSchedule {
            kind: ScheduleKind::PolyDecay,
            peak_lr,
            warmup_steps,
            total_steps,
            end_lr: 0.0,
            power: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps < 1 {
            return Err(Error::config("schedule.warmup_steps", "must be >= 1"));
        }
        if self.kind == ScheduleKind::PolyDecay && self.total_steps <= self.warmup_steps {
            return Err(Error::config("schedule.total_steps", "must exceed warmup_steps"));
        }
        if !(self.peak_lr >= 0.0) {
            return Err(Error::config("schedule.peak_lr", "must be >= 0"));
        }
        Ok(())
    }

    /// Learning rate for the 1-based update `step`.
    pub fn lr_at(&self, step: u64) -> Result<f64> {
        if step == 0 {
            return Err(Error::Contract("learning-rate step must be >= 1".into()));
        }
        self.validate()?;
        Ok(self.rate(step as f64))
    }

    /// The schedule as a function of a real-valued step.
    fn rate(&self, s: f64) -> f64 {
        let w = self.warmup_steps as f64;
        if s <= w {
            return self.peak_lr * s / w;
        }
        match self.kind {
            ScheduleKind::InverseSqrt => self.peak_lr * (w / s).sqrt(),
            ScheduleKind::PolyDecay => {
                let total = self.total_steps as f64;
                if s >= total {
                    self.end_lr
                } else {
                    let frac = 1.0 - (s - w) / (total - w);
                    self.end_lr + (self.peak_lr - self.end_lr) * frac.powf(self.power)
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_signed_lr() {
        let mut p = Tensor::zeros(&[1]);
        let mut st = AdamState::new(1, AdamConfig::default());
        adam_step(&mut p, &[1.0], &mut st, 0.1).unwrap();
        assert!((p.data()[0] + 0.1 / (1.0 + 1e-6)).abs() < 1e-15);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_grad_is_noop() {
        let mut p = Tensor::new(vec![2], vec![0.5, -1.5]).unwrap();
        let mut st = AdamState::new(2, AdamConfig::default());
        adam_step(&mut p, &[0.0, 0.0], &mut st, 0.1).unwrap();
        assert_eq!(p.data(), &[0.5, -1.5]);
        assert_eq!(st.m, vec![0.0, 0.0]);
        assert_eq!(st.v, vec![0.0, 0.0]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Tensor::zeros(&[2]);
        let mut st = AdamState::new(2, AdamConfig::default());
        assert!(adam_step(&mut p, &[1.0], &mut st, 0.1).is_err());
    }

    #[test]
    fn schedule_examples() {
        let inv = LrSchedule::inverse_sqrt(0.0005, 10_000);
        assert!((inv.lr_at(10_000).unwrap() - 0.0005).abs() < 1e-18);
        assert!((inv.lr_at(40_000).unwrap() - 0.00025).abs() < 1e-18);
        let poly = LrSchedule::poly_decay(0.005, 4, 8);
        assert!((poly.lr_at(6).unwrap() - 0.0025).abs() < 1e-15);
        assert!(inv.lr_at(0).is_err());
    }

    #[test]
    fn schedules_continuous_at_warmup() {
        for s in [LrSchedule::inverse_sqrt(0.01, 100), LrSchedule::poly_decay(0.01, 100, 1000)] {
            assert!((s.lr_at(100).unwrap() - s.peak_lr).abs() < 1e-15);
            let left = s.rate(100.0 - 1e-9);
            let right = s.rate(100.0 + 1e-9);
            assert!((left - s.peak_lr).abs() < 1e-12);
            assert!((right - s.peak_lr).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_schedules() {
        assert!(LrSchedule::inverse_sqrt(0.1, 0).lr_at(1).is_err());
        assert!(LrSchedule::poly_decay(0.1, 10, 10).lr_at(1).is_err());
    }
}
