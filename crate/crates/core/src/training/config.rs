use serde::{Deserialize, Serialize};

use super::TrainingError;
use crate::nets::{ModelConfig, Variant};
use crate::phantom::{Task, TaskSpec, SEGMENT_LEN};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub adam_eps: f64,
    pub pct_start: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub task: Task,
    pub variant: Variant,
    /// Random crops drawn from every training record per epoch.
    pub crops_per_record: usize,
    pub segment_len: usize,
    /// Evaluate on the held-out set every this many epochs; 0 disables.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_lr: 1e-3,
            epochs: 10,
            batch_size: 8,
            weight_decay: 1e-2,
            betas: (0.9, 0.999),
            adam_eps: 1e-8,
            pct_start: 0.3,
            grad_clip: 1.0,
            seed: 0,
            task: Task::Volume,
            variant: Variant::EitOnly,
            crops_per_record: 2,
            segment_len: SEGMENT_LEN,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        let bad = |m: String| Err(TrainingError::Config(m));
        if !(self.pct_start > 0.0 && self.pct_start < 1.0) {
            return bad(format!("pct_start must lie in (0, 1), got {}", self.pct_start));
        }
        if !(self.max_lr > 0.0) || !self.max_lr.is_finite() {
            return bad(format!("max_lr must be positive, got {}", self.max_lr));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return bad(format!("betas must lie in [0, 1), got ({b1}, {b2})"));
        }
        if !(self.adam_eps > 0.0) || !(self.grad_clip > 0.0) {
            return bad("adam_eps and grad_clip must be positive".into());
        }
        for (name, v) in [("epochs", self.epochs), ("batch_size", self.batch_size), ("segment_len", self.segment_len)] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.crops_per_record == 0 {
            return bad("crops_per_record must be positive".into());
        }
        self.task_spec().map(|_| ())
    }

    pub fn task_spec(&self) -> Result<TaskSpec, TrainingError> {
        TaskSpec::new(self.task, self.variant).map_err(|e| TrainingError::Config(e.to_string()))
    }
}

/// `base` with the outputs and variant required by `spec`.
pub fn model_config_for(base: &ModelConfig, spec: &TaskSpec) -> ModelConfig {
    ModelConfig { output_channels: spec.output_channels(), variant: spec.variant, ..base.clone() }
}
