use std::f64::consts::PI;

use super::{Channel, SigprocError};

/// Sample rate of every pipeline signal after resampling.
pub const TARGET_RATE: f64 = 10.0;

/// Half-width of the anti-alias kernel, in seconds.
const KERNEL_HALF_WIDTH_S: f64 = 1.0;

/// Resamples a channel to 10 Hz.
pub fn resample_10hz(ch: &Channel) -> Result<Channel, SigprocError> {
    let samples = resample(&ch.samples, ch.rate, TARGET_RATE)?;
    Ok(Channel { id: ch.id, samples, rate: TARGET_RATE, unit: ch.unit.clone() })
}

/// Zero-phase low-pass at `target / 2` followed by linear interpolation at
/// the instants `k / target`, `k = 0, 1, …` inside the source span.
pub fn resample(samples: &[f64], rate: f64, target: f64) -> Result<Vec<f64>, SigprocError> {
    if !(rate >= target) || !rate.is_finite() {
        return Err(SigprocError::UnsupportedRate { rate, min: target });
    }
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    let n_out = (((samples.len() - 1) as f64) * target / rate + 1e-9).floor() as usize + 1;
    let step = rate / target;
    let filter = (rate > target).then(|| LowPass::new(target / 2.0, rate));
    let at = |i: usize| match &filter {
        Some(f) => f.apply_at(samples, i),
        None => samples[i],
    };
    let mut out = Vec::with_capacity(n_out);
    for k in 0..n_out {
        let pos = k as f64 * step;
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        if frac < 1e-9 || i + 1 >= samples.len() {
            out.push(at(i.min(samples.len() - 1)));
        } else {
            out.push((1.0 - frac) * at(i) + frac * at(i + 1));
        }
    }
    Ok(out)
}

/// Blackman-windowed sinc, normalized to unit DC gain.
struct LowPass {
    taps: Vec<f64>,
    half: usize,
}

impl LowPass {
    fn new(cutoff: f64, rate: f64) -> Self {
        let half = (KERNEL_HALF_WIDTH_S * rate).round().max(1.0) as usize;
        let fc = cutoff / rate;
        let len = 2 * half + 1;
        let mut taps: Vec<f64> = (0..len)
            .map(|i| {
                let m = i as f64 - half as f64;
                let sinc = if m == 0.0 { 2.0 * fc } else { (2.0 * PI * fc * m).sin() / (PI * m) };
                let w = 0.42 - 0.5 * (2.0 * PI * i as f64 / (len - 1) as f64).cos()
                    + 0.08 * (4.0 * PI * i as f64 / (len - 1) as f64).cos();
                sinc * w
            })
            .collect();
        let sum: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= sum);
        LowPass { taps, half }
    }

    /// Filtered value at sample `i`; the signal is extended by point
    /// reflection about its end samples.
    fn apply_at(&self, x: &[f64], i: usize) -> f64 {
        let n = x.len() as isize;
        let sample = |j: isize| -> f64 {
            if j < 0 {
                let r = (-j).min(n - 1);
                2.0 * x[0] - x[r as usize]
            } else if j >= n {
                let r = (2 * (n - 1) - j).max(0);
                2.0 * x[(n - 1) as usize] - x[r as usize]
            } else {
                x[j as usize]
            }
        };
        self.taps
            .iter()
            .enumerate()
            .map(|(k, &t)| t * sample(i as isize + k as isize - self.half as isize))
            .sum()
    }
}
