use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::optim::{adamw_step, clip_grad_norm, AdamState, AdamWParams};
use super::schedule::one_cycle_lr;
use super::{evaluate_segments, TrainConfig, TrainingError};
use crate::autodiff::{AutodiffError, Bindings, Element, Tape, Tensor, Var};
use crate::nets::{FrameBatch, Model};
use crate::phantom::{crop_segments, derive_seed, Record, Segment, TaskSpec};

/// Stacks segments into a model batch and a `[B,T,K]` target tensor.
pub fn make_batch(segments: &[&Segment]) -> Result<(FrameBatch<f32>, Tensor<f32>), TrainingError> {
    let first = segments.first().ok_or_else(|| TrainingError::Usage("empty batch".into()))?;
    let (t, k) = (first.len, first.channels());
    let side = ((first.eit.len() / t) as f64).sqrt() as usize;
    if segments.iter().any(|s| s.len != t || s.channels() != k || s.aux_paw.is_some() != first.aux_paw.is_some()) {
        return Err(TrainingError::Usage("segments of one batch must agree in length, channels and inputs".into()));
    }
    let b = segments.len();
    let eit: Vec<f32> = segments.iter().flat_map(|s| s.eit.iter().copied()).collect();
    let targets: Vec<f32> = segments.iter().flat_map(|s| s.targets.iter().copied()).collect();
    let aux_paw = match first.aux_paw {
        Some(_) => Some(Tensor::new(
            vec![b, t, 1],
            segments.iter().flat_map(|s| s.aux_paw.as_ref().unwrap().iter().copied()).collect(),
        )?),
        None => None,
    };
    Ok((FrameBatch { eit: Tensor::new(vec![b, t, 1, side, side], eit)?, aux_paw }, Tensor::new(vec![b, t, k], targets)?))
}

/// Mean absolute error over every element of `[B,T,K]`, all channels weighted equally.
pub fn l1_multitask_loss<E: Element>(tape: &mut Tape<E>, pred: Var, target: Var) -> Result<Var, TrainingError> {
    tape.l1_loss(pred, target).map_err(|e| match e {
        AutodiffError::Shape { detail, .. } => TrainingError::Usage(format!("loss: {detail}")),
        other => other.into(),
    })
}

/// Where training segments come from.
pub enum TrainData<'a> {
    /// Fresh random crops of the listed records every epoch.
    Records { records: &'a [Record], indices: &'a [usize] },
    /// The same segments every epoch, reshuffled.
    Fixed(&'a [Segment]),
}

impl TrainData<'_> {
    fn epoch(&self, cfg: &TrainConfig, spec: &TaskSpec, epoch: usize) -> Vec<Segment> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x7452_4149, epoch as u64));
        let mut segs: Vec<Segment> = match self {
            TrainData::Records { records, indices } => indices
                .iter()
                .flat_map(|&i| crop_segments(&records[i], i, spec, cfg.crops_per_record, cfg.segment_len, &mut rng))
                .collect(),
            TrainData::Fixed(s) => s.to_vec(),
        };
        segs.shuffle(&mut rng);
        segs
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub grad_norm: f64,
    /// Primary-channel metrics on the held-out set, when evaluated after this step.
    pub eval_rmse: Option<f64>,
    pub eval_dtw: Option<f64>,
}

pub const LOG_HEADER: &str = "step,epoch,lr,train_loss,grad_norm,eval_rmse,eval_dtw";

pub fn log_csv(rows: &[LogRow]) -> String {
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.6}"));
    let mut s = format!("{LOG_HEADER}\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{:.9},{:.6},{:.6},{},{}\n",
            r.step,
            r.epoch,
            r.lr,
            r.loss,
            r.grad_norm,
            opt(r.eval_rmse),
            opt(r.eval_dtw)
        ));
    }
    s
}

/// AdamW state for every trainable parameter of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer<E> {
    pub step: u64,
    /// Indexed like the model's parameter store; `None` for frozen buffers.
    pub states: Vec<Option<AdamState<E>>>,
}

impl<E: Element> Optimizer<E> {
    pub fn for_model(model: &Model<E>) -> Self {
        let states = model.params().iter().map(|(_, p)| p.trainable.then(|| AdamState::zeros(p.value.len()))).collect();
        Optimizer { step: 0, states }
    }
}

pub struct TrainOutcome {
    pub model: Model<f32>,
    pub optimizer: Optimizer<f32>,
    pub history: Vec<LogRow>,
    pub epochs: usize,
}

/// Names the first non-finite tensor on `tape`, preferring parameter names.
fn describe_non_finite(tape: &Tape<f32>, model: &Model<f32>, bindings: &Bindings) -> String {
    match tape.first_non_finite() {
        Some(AutodiffError::NonFinite { index, op }) => {
            let param = bindings.vars().iter().position(|v| v.index() == index);
            match param {
                Some(i) => format!("parameter '{}'", model.params().iter().nth(i).unwrap().1.name),
                None => format!("tensor #{index} produced by {op}"),
            }
        }
        _ => "loss".into(),
    }
}

/// Steps per epoch for `n` segments.
fn batches(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size)
}

/// Trains `model` with L1 loss, AdamW, one-cycle learning rate and
/// gradient-norm clipping. Fully determined by `cfg.seed` and the data.
/// `held_out` segments are scored every `cfg.eval_every` epochs.
pub fn train(
    mut model: Model<f32>,
    data: &TrainData,
    spec: &TaskSpec,
    cfg: &TrainConfig,
    held_out: &[Segment],
    mut on_step: impl FnMut(&LogRow),
) -> Result<TrainOutcome, TrainingError> {
    cfg.validate()?;
    if model.config().output_channels != spec.output_channels() || model.config().variant != spec.variant {
        return Err(TrainingError::Config(format!(
            "model outputs {:?} ({}) do not match task {} ({})",
            model.config().output_channels,
            model.config().variant,
            spec.task,
            spec.variant
        )));
    }
    let first = data.epoch(cfg, spec, 0);
    if first.is_empty() {
        return Err(TrainingError::Config("no training segments (records too short or missing channels)".into()));
    }
    let per_epoch = batches(first.len(), cfg.batch_size);
    let total = per_epoch * cfg.epochs;
    let mut opt = Optimizer::for_model(&model);
    let mut history = Vec::with_capacity(total);
    let mut step = 0;
    let mut segments = Some(first);
    for epoch in 0..cfg.epochs {
        let epoch_segs = segments.take().unwrap_or_else(|| data.epoch(cfg, spec, epoch));
        for chunk in epoch_segs.chunks(cfg.batch_size) {
            let refs: Vec<&Segment> = chunk.iter().collect();
            let lr = one_cycle_lr(step, total, cfg.max_lr, cfg.pct_start)?;
            let (loss, grad_norm) = train_step(&mut model, &mut opt, &refs, lr, cfg, step)?;
            let row = LogRow { step, epoch, lr, loss, grad_norm, eval_rmse: None, eval_dtw: None };
            on_step(&row);
            history.push(row);
            step += 1;
        }
        if cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0 && !held_out.is_empty() {
            let report = evaluate_segments(&model, held_out, spec, "held-out", cfg.batch_size)?;
            if let (Some(row), Some(m)) = (history.last_mut(), report.rows.first()) {
                row.eval_rmse = Some(m.rmse);
                row.eval_dtw = Some(m.dtw);
                log::info!("epoch {epoch}: held-out rmse {:.4} dtw {:.3} plus {}/{}", m.rmse, m.dtw, m.plus, m.segments);
            }
        }
    }
    Ok(TrainOutcome { model, optimizer: opt, history, epochs: cfg.epochs })
}

/// One optimizer step on a batch; returns the loss and the gradient norm before clipping.
pub fn train_step(
    model: &mut Model<f32>,
    opt: &mut Optimizer<f32>,
    batch: &[&Segment],
    lr: f64,
    cfg: &TrainConfig,
    step: usize,
) -> Result<(f64, f64), TrainingError> {
    let (inputs, targets) = make_batch(batch)?;
    let mut tape = Tape::new();
    let p = model.params().bind(&mut tape);
    let fwd = model.forward(&mut tape, &p, &inputs, true)?;
    let tgt = tape.constant(targets);
    let loss_var = l1_multitask_loss(&mut tape, fwd.output, tgt)?;
    let loss = tape.value(loss_var).item().to_f64_lossy();
    if !loss.is_finite() {
        return Err(TrainingError::NonFinite { step, detail: describe_non_finite(&tape, model, &p) });
    }
    tape.backward(loss_var)?;
    let mut grads = model.params().take_grads(&mut tape, &p);
    for (g, (_, param)) in grads.iter().zip(model.params().iter()) {
        if g.as_ref().is_some_and(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(TrainingError::NonFinite { step, detail: format!("gradient of parameter '{}'", param.name) });
        }
    }
    let grad_norm = clip_grad_norm(&mut grads, cfg.grad_clip);
    opt.step += 1;
    let hp = AdamWParams { lr, weight_decay: cfg.weight_decay, betas: cfg.betas, eps: cfg.adam_eps };
    for ((g, state), (_, param)) in grads.iter().zip(opt.states.iter_mut()).zip(model.params_mut().iter_mut()) {
        if let (Some(g), Some(state)) = (g, state) {
            adamw_step(param.value.data_mut(), g, state, opt.step, &hp)?;
        }
    }
    model.apply_bn_updates(&fwd.bn_updates);
    Ok((loss, grad_norm))
}

/// Gradient norm of each output channel's row of the head weight after one
/// backward pass of the joint loss on `batch`.
pub fn head_row_grad_norms(model: &Model<f32>, batch: &[&Segment]) -> Result<Vec<f64>, TrainingError> {
    let (inputs, targets) = make_batch(batch)?;
    let mut tape = Tape::new();
    let p = model.params().bind(&mut tape);
    let fwd = model.forward(&mut tape, &p, &inputs, true)?;
    let tgt = tape.constant(targets);
    let loss = l1_multitask_loss(&mut tape, fwd.output, tgt)?;
    tape.backward(loss)?;
    let (w, _) = model.head_param_ids();
    let g = tape.grad(p[w]).ok_or_else(|| TrainingError::Usage("head weight received no gradient".into()))?;
    let cols = model.params().value(w).shape()[1];
    Ok(g.chunks(cols).map(|r| r.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt()).collect())
}

/// Loss of the always-zero predictor and of `model` on `segments`, in model units.
pub fn baseline_and_model_l1(model: &Model<f32>, segments: &[Segment], batch_size: usize) -> Result<(f64, f64), TrainingError> {
    let (mut zero, mut fit, mut n) = (0.0, 0.0, 0usize);
    for chunk in segments.chunks(batch_size.max(1)) {
        let refs: Vec<&Segment> = chunk.iter().collect();
        let (inputs, targets) = make_batch(&refs)?;
        let pred = model.predict(&inputs)?;
        for (p, t) in pred.data().iter().zip(targets.data()) {
            zero += (*t as f64).abs();
            fit += (*p as f64 - *t as f64).abs();
        }
        n += targets.len();
    }
    if n == 0 {
        return Err(TrainingError::Usage("no segments".into()));
    }
    Ok((zero / n as f64, fit / n as f64))
}
