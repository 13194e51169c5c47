use super::TrainingError;

/// Initial learning rate is `max_lr / WARMUP_DIVISOR`.
pub const WARMUP_DIVISOR: f64 = 25.0;
/// Final learning rate is `max_lr / FINAL_DIVISOR`.
pub const FINAL_DIVISOR: f64 = 1e4;

fn cosine(from: f64, to: f64, pct: f64) -> f64 {
    to + (from - to) * 0.5 * (1.0 + (std::f64::consts::PI * pct).cos())
}

/// One-cycle schedule: cosine warmup from `max_lr/25` to `max_lr` at step
/// `pct_start · total_steps`, then cosine annealing to `max_lr/1e4` at the
/// last step.
pub fn one_cycle_lr(step: usize, total_steps: usize, max_lr: f64, pct_start: f64) -> Result<f64, TrainingError> {
    if step >= total_steps {
        return Err(TrainingError::Usage(format!("one_cycle_lr: step {step} outside 0..{total_steps}")));
    }
    if !(pct_start > 0.0 && pct_start < 1.0) || !(max_lr > 0.0) {
        return Err(TrainingError::Usage(format!(
            "one_cycle_lr: need 0 < pct_start < 1 and max_lr > 0, got {pct_start} and {max_lr}"
        )));
    }
    let peak = pct_start * total_steps as f64;
    let last = (total_steps - 1) as f64;
    let s = step as f64;
    let lr = if s <= peak {
        cosine(max_lr / WARMUP_DIVISOR, max_lr, s / peak)
    } else {
        cosine(max_lr, max_lr / FINAL_DIVISOR, (s - peak) / (last - peak))
    };
    Ok(lr)
}
