//! Loss, optimizer, learning-rate schedule, training loop, checkpoints and evaluation.

mod checkpoint;
mod config;
mod evaluate;
mod optim;
mod schedule;
mod trainer;

use std::path::Path;

pub use checkpoint::{Checkpoint, MODEL_FILE, OPTIMIZER_FILE, TRAIN_STATE_FILE};
pub use config::{model_config_for, TrainConfig};
pub use evaluate::{evaluate, evaluate_segments, report_from_scores, score_segments, test_segments, ScoredSegment};
pub use optim::{adamw_step, clip_grad_norm, AdamState, AdamWParams};
pub use schedule::{one_cycle_lr, FINAL_DIVISOR, WARMUP_DIVISOR};
pub use trainer::{
    baseline_and_model_l1, head_row_grad_norms, l1_multitask_loss, log_csv, make_batch, train, train_step, LogRow,
    Optimizer, TrainData, TrainOutcome, LOG_HEADER,
};

use crate::autodiff::AutodiffError;
use crate::nets::NetError;
use crate::phantom::PhantomError;
use crate::sigproc::SigprocError;

#[derive(Debug, thiserror::Error)]
pub enum TrainingError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error("non-finite value at step {step}: {detail}")]
    NonFinite { step: usize, detail: String },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Phantom(#[from] PhantomError),
    #[error(transparent)]
    Sigproc(#[from] SigprocError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<AutodiffError> for TrainingError {
    fn from(e: AutodiffError) -> Self {
        TrainingError::Net(NetError::Autodiff(e))
    }
}

impl TrainingError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        TrainingError::Io { path: path.display().to_string(), source }
    }
}
