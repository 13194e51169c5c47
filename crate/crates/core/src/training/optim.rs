use serde::{Deserialize, Serialize};

use super::TrainingError;
use crate::autodiff::Element;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWParams {
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
}

/// First and second moment buffers of one parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState<E> {
    pub m: Vec<E>,
    pub v: Vec<E>,
}

impl<E: Element> AdamState<E> {
    pub fn zeros(len: usize) -> Self {
        AdamState { m: vec![E::zero(); len], v: vec![E::zero(); len] }
    }
}

/// One AdamW update with decoupled weight decay:
/// `θ ← θ − lr·(m̂/(√v̂ + eps) + wd·θ)`. `t` is the 1-based step count used
/// for bias correction.
pub fn adamw_step<E: Element>(
    theta: &mut [E],
    grad: &[E],
    state: &mut AdamState<E>,
    t: u64,
    p: &AdamWParams,
) -> Result<(), TrainingError> {
    if grad.len() != theta.len() || state.m.len() != theta.len() || state.v.len() != theta.len() {
        return Err(TrainingError::Usage(format!(
            "adamw_step: parameter has {} elements, gradient {}, state {}/{}",
            theta.len(),
            grad.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    if t == 0 {
        return Err(TrainingError::Usage("adamw_step: step count starts at 1".into()));
    }
    let (b1, b2) = p.betas;
    let c1 = 1.0 - b1.powi(t.min(i32::MAX as u64) as i32);
    let c2 = 1.0 - b2.powi(t.min(i32::MAX as u64) as i32);
    for i in 0..theta.len() {
        let g = grad[i].to_f64_lossy();
        let m = b1 * state.m[i].to_f64_lossy() + (1.0 - b1) * g;
        let v = b2 * state.v[i].to_f64_lossy() + (1.0 - b2) * g * g;
        state.m[i] = E::from_f64_lossy(m);
        state.v[i] = E::from_f64_lossy(v);
        let th = theta[i].to_f64_lossy();
        let update = (m / c1) / ((v / c2).sqrt() + p.eps) + p.weight_decay * th;
        theta[i] = E::from_f64_lossy(th - p.lr * update);
    }
    Ok(())
}

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm<E: Element>(grads: &mut [Option<Vec<E>>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .flat_map(|g| g.iter())
        .map(|v| v.to_f64_lossy().powi(2))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = E::from_f64_lossy(max_norm / norm);
        grads.iter_mut().flatten().flat_map(|g| g.iter_mut()).for_each(|v| *v *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(lr: f64, wd: f64) -> AdamWParams {
        AdamWParams { lr, weight_decay: wd, betas: (0.9, 0.999), eps: 1e-8 }
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut th = [1.0f64];
        let mut s = AdamState::zeros(1);
        adamw_step(&mut th, &[1.0], &mut s, 1, &params(0.1, 0.0)).unwrap();
        assert!((th[0] - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_pure_decay() {
        let mut th = [2.0f64, -3.0];
        let mut s = AdamState::zeros(2);
        adamw_step(&mut th, &[0.0, 0.0], &mut s, 1, &params(0.1, 0.01)).unwrap();
        assert!((th[0] - 2.0 * (1.0 - 0.001)).abs() < 1e-15);
        assert!((th[1] + 3.0 * (1.0 - 0.001)).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_usage_error() {
        let mut th = [1.0f32; 3];
        let mut s = AdamState::zeros(3);
        assert!(matches!(adamw_step(&mut th, &[0.0; 2], &mut s, 1, &params(0.1, 0.0)), Err(TrainingError::Usage(_))));
    }

    #[test]
    fn clipping_caps_the_joint_norm() {
        let mut g = vec![Some(vec![3.0f64]), None, Some(vec![4.0])];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0].as_ref().unwrap()[0] - 0.6).abs() < 1e-15);
        assert!((g[2].as_ref().unwrap()[0] - 0.8).abs() < 1e-15);
    }
}
