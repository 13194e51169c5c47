use super::SigprocError;

/// Below this population SD a sequence counts as constant.
pub const DEGENERATE_SD: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Standardized {
    pub values: Vec<f64>,
    pub mean: f64,
    /// Population SD, or [`DEGENERATE_SD`] for constant input.
    pub sd: f64,
    pub degenerate: bool,
}

pub fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Zero mean, unit population SD. Constant input is only centred.
pub fn standardize(x: &[f64]) -> Result<Standardized, SigprocError> {
    if x.is_empty() {
        return Err(SigprocError::Usage("standardize: empty input".into()));
    }
    let (mean, sd) = mean_sd(x);
    if sd <= DEGENERATE_SD {
        return Ok(Standardized { values: x.iter().map(|v| v - mean).collect(), mean, sd: DEGENERATE_SD, degenerate: true });
    }
    Ok(Standardized { values: x.iter().map(|v| (v - mean) / sd).collect(), mean, sd, degenerate: false })
}

/// In-place variant for `f32` buffers such as EIT frame stacks; statistics
/// are accumulated in `f64`. Returns `(mean, sd, degenerate)`.
pub fn standardize_f32(x: &mut [f32]) -> Result<(f64, f64, bool), SigprocError> {
    if x.is_empty() {
        return Err(SigprocError::Usage("standardize: empty input".into()));
    }
    let n = x.len() as f64;
    let mean = x.iter().map(|&v| v as f64).sum::<f64>() / n;
    let sd = (x.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n).sqrt();
    let degenerate = sd <= DEGENERATE_SD;
    let scale = if degenerate { 1.0 } else { 1.0 / sd };
    for v in x.iter_mut() {
        *v = ((*v as f64 - mean) * scale) as f32;
    }
    Ok((mean, if degenerate { DEGENERATE_SD } else { sd }, degenerate))
}
