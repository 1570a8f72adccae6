use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{AdamConfig, LrSchedule};

fn one() -> usize {
    1
}

fn clip_default() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub schedule: LrSchedule,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default)]
    pub label_smoothing: f64,
    /// Overrides the model's dropout when set.
    #[serde(default)]
    pub dropout: Option<f64>,
    #[serde(default)]
    pub layerdrop: Option<f64>,
    pub max_updates: usize,
    /// Micro-batch size limit in source+target tokens (at least one example per batch).
    pub max_tokens: usize,
    #[serde(default = "one")]
    pub update_freq: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "clip_default")]
    pub clip_norm: f64,
    /// Dev evaluation period in updates; 0 evaluates only after the last update.
    #[serde(default)]
    pub eval_every: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::config("label_smoothing", "must be in [0, 1)"));
        }
        if let Some(p) = self.dropout {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::config("dropout", "must be in [0, 1)"));
            }
        }
        if let Some(p) = self.layerdrop {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config("layerdrop", "must be in [0, 1]"));
            }
        }
        if self.max_tokens == 0 {
            return Err(Error::config("max_tokens", "must be >= 1"));
        }
        if self.update_freq == 0 {
            return Err(Error::config("update_freq", "must be >= 1"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::config("clip_norm", "must be > 0"));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.epsilon > 0.0) || a.weight_decay < 0.0 {
            return Err(Error::config("adam", "betas in [0, 1), epsilon > 0, weight_decay >= 0"));
        }
        Ok(())
    }

    /// Small defaults used by tests and recipes.
    pub fn quick(max_updates: usize, peak_lr: f64) -> Self {
        TrainConfig {
            schedule: LrSchedule::inverse_sqrt(peak_lr, (max_updates as u64 / 10).max(1)),
            adam: AdamConfig::default(),
            label_smoothing: 0.0,
            dropout: None,
            layerdrop: None,
            max_updates,
            max_tokens: 256,
            update_freq: 1,
            seed: 0,
            clip_norm: 1.0,
            eval_every: 0,
        }
    }
}
