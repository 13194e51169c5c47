use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::trainer::{LogRow, Optimizer, TrainOutcome};
use super::{AdamState, TrainConfig, TrainingError};
use crate::autodiff::Tensor;
use crate::nets::{Archive, Model, NetError};

pub const MODEL_FILE: &str = "model.ckpt";
pub const OPTIMIZER_FILE: &str = "optimizer.ckpt";
pub const TRAIN_STATE_FILE: &str = "train.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TrainState {
    config: TrainConfig,
    epoch: usize,
    history: Vec<LogRow>,
}

/// Model, optimizer state, training configuration, epoch and log.
pub struct Checkpoint {
    pub model: Model<f32>,
    pub optimizer: Optimizer<f32>,
    pub config: TrainConfig,
    pub epoch: usize,
    pub history: Vec<LogRow>,
}

impl Checkpoint {
    pub fn from_outcome(outcome: TrainOutcome, config: TrainConfig) -> Self {
        Checkpoint {
            model: outcome.model,
            optimizer: outcome.optimizer,
            config,
            epoch: outcome.epochs,
            history: outcome.history,
        }
    }

    fn optimizer_archive(&self) -> Archive<f32> {
        let mut tensors = Vec::new();
        for (state, (_, p)) in self.optimizer.states.iter().zip(self.model.params().iter()) {
            if let Some(s) = state {
                let shape = vec![s.m.len()];
                tensors.push((format!("{}.m", p.name), Tensor::new(shape.clone(), s.m.clone()).expect("shape matches")));
                tensors.push((format!("{}.v", p.name), Tensor::new(shape, s.v.clone()).expect("shape matches")));
            }
        }
        Archive { meta: serde_json::json!({ "kind": "adamw", "step": self.optimizer.step }), tensors }
    }

    /// Writes a checkpoint directory (created if missing).
    pub fn save(&self, dir: &Path) -> Result<(), TrainingError> {
        fs::create_dir_all(dir).map_err(|e| TrainingError::io(dir, e))?;
        self.model.save(&dir.join(MODEL_FILE))?;
        self.optimizer_archive().write(&dir.join(OPTIMIZER_FILE))?;
        let state = TrainState { config: self.config.clone(), epoch: self.epoch, history: self.history.clone() };
        let path = dir.join(TRAIN_STATE_FILE);
        fs::write(&path, serde_json::to_string_pretty(&state).expect("state serializes")).map_err(|e| TrainingError::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self, TrainingError> {
        let model = Model::<f32>::load(&dir.join(MODEL_FILE))?;
        let arch = Archive::<f32>::read(&dir.join(OPTIMIZER_FILE))?;
        let bad = |m: String| TrainingError::Net(NetError::Format(m));
        if arch.meta.get("kind").and_then(|k| k.as_str()) != Some("adamw") {
            return Err(bad("optimizer archive has the wrong kind".into()));
        }
        let step = arch.meta.get("step").and_then(|s| s.as_u64()).ok_or_else(|| bad("optimizer step missing".into()))?;
        let mut tensors = arch.tensors.into_iter();
        let mut states = Vec::with_capacity(model.params().len());
        for (_, p) in model.params().iter() {
            if !p.trainable {
                states.push(None);
                continue;
            }
            let mut next = |suffix: &str| {
                let want = format!("{}.{suffix}", p.name);
                match tensors.next() {
                    Some((name, t)) if name == want && t.len() == p.value.len() => Ok(t.into_data()),
                    Some((name, _)) => Err(bad(format!("expected optimizer tensor '{want}', found '{name}'"))),
                    None => Err(bad(format!("optimizer tensor '{want}' missing"))),
                }
            };
            let m = next("m")?;
            let v = next("v")?;
            states.push(Some(AdamState { m, v }));
        }
        if tensors.next().is_some() {
            return Err(bad("optimizer archive has extra tensors".into()));
        }
        let path = dir.join(TRAIN_STATE_FILE);
        let text = fs::read_to_string(&path).map_err(|e| TrainingError::io(&path, e))?;
        let state: TrainState = serde_json::from_str(&text).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        Ok(Checkpoint { model, optimizer: Optimizer { step, states }, config: state.config, epoch: state.epoch, history: state.history })
    }
}
