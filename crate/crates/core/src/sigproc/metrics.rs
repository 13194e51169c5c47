//! Per-segment evaluation metrics and the automated visual-rating proxy.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::standardize::{mean_sd, DEGENERATE_SD};
use super::{SigprocError, TARGET_RATE};

/// Pearson correlation of `a[i]` with `b[i + lag]` over their overlap.
/// `None` when the overlap is shorter than two samples or either side is constant.
pub fn lagged_pearson(a: &[f64], b: &[f64], lag: i64) -> Option<f64> {
    let start = 0i64.max(-lag);
    let end = (a.len() as i64).min(b.len() as i64 - lag);
    if end - start < 2 {
        return None;
    }
    let xs = &a[start as usize..end as usize];
    let ys = &b[(start + lag) as usize..(end + lag) as usize];
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    let denom = (sxx * syy).sqrt();
    if denom <= f64::MIN_POSITIVE || sxx / n <= DEGENERATE_SD * DEGENERATE_SD || syy / n <= DEGENERATE_SD * DEGENERATE_SD {
        return None;
    }
    Some(sxy / denom)
}

fn check_equal_len(op: &str, a: &[f64], b: &[f64]) -> Result<(), SigprocError> {
    if a.len() != b.len() {
        return Err(SigprocError::Usage(format!("{op}: length mismatch ({} vs {})", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(SigprocError::Usage(format!("{op}: empty input")));
    }
    Ok(())
}

pub fn rmse(pred: &[f64], tgt: &[f64]) -> Result<f64, SigprocError> {
    check_equal_len("rmse", pred, tgt)?;
    Ok((pred.iter().zip(tgt).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64).sqrt())
}

/// Lag of the cross-correlation maximum closest to zero within `±max_lag`.
///
/// Local maxima include range end points that are not below their inner
/// neighbour. Only maxima with positive correlation are considered; when there
/// are none the global maximum is used. Returns `0` if no lag has a defined
/// correlation.
pub fn closest_correlation_peak(pred: &[f64], tgt: &[f64], max_lag: usize) -> i64 {
    let m = max_lag as i64;
    let corr: Vec<f64> = (-m..=m).map(|l| lagged_pearson(pred, tgt, l).unwrap_or(f64::NEG_INFINITY)).collect();
    let at = |i: i64| if i < 0 || i >= corr.len() as i64 { f64::NEG_INFINITY } else { corr[i as usize] };
    let mut best: Option<(i64, f64)> = None;
    for i in 0..corr.len() as i64 {
        let c = corr[i as usize];
        if c > 0.0 && c >= at(i - 1) && c >= at(i + 1) {
            let lag = i - m;
            let better = match best {
                None => true,
                Some((bl, bc)) => lag.abs() < bl.abs() || (lag.abs() == bl.abs() && c > bc),
            };
            if better {
                best = Some((lag, c));
            }
        }
    }
    if let Some((lag, _)) = best {
        return lag;
    }
    corr.iter()
        .enumerate()
        .filter(|(_, c)| c.is_finite())
        .max_by(|a, b| a.1.total_cmp(b.1).then((b.0 as i64 - m).abs().cmp(&(a.0 as i64 - m).abs())))
        .map_or(0, |(i, _)| i as i64 - m)
}

/// RMSE after shifting prediction against target to the nearest correlation peak.
pub fn shifted_rmse(pred: &[f64], tgt: &[f64], max_lag: usize) -> Result<f64, SigprocError> {
    check_equal_len("shifted_rmse", pred, tgt)?;
    if max_lag == 0 {
        return rmse(pred, tgt);
    }
    if 2 * max_lag >= pred.len() {
        return Err(SigprocError::Usage(format!("shifted_rmse: max_lag {max_lag} must be below half the length {}", pred.len())));
    }
    let lag = closest_correlation_peak(pred, tgt, max_lag);
    let start = 0i64.max(-lag) as usize;
    let end = (pred.len() as i64).min(tgt.len() as i64 - lag) as usize;
    let off = |i: usize| (i as i64 + lag) as usize;
    let sse: f64 = (start..end).map(|i| (pred[i] - tgt[off(i)]).powi(2)).sum();
    Ok((sse / (end - start) as f64).sqrt())
}

/// Classic dynamic time warping: absolute-difference cost, steps
/// (1,0), (0,1), (1,1), boundary to boundary, no window. Returns the
/// accumulated (unnormalized) cost.
pub fn dtw(a: &[f64], b: &[f64]) -> Result<f64, SigprocError> {
    if a.is_empty() || b.is_empty() {
        return Err(SigprocError::Usage("dtw: empty input".into()));
    }
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m];
    let mut cur = vec![0.0; m];
    for (i, &x) in a.iter().enumerate() {
        for j in 0..m {
            let cost = (x - b[j]).abs();
            let best = match (i, j) {
                (0, 0) => 0.0,
                (0, _) => cur[j - 1],
                (_, 0) => prev[0],
                _ => prev[j].min(cur[j - 1]).min(prev[j - 1]),
            };
            cur[j] = cost + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m - 1])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VisualRating {
    /// Frequency and amplitude agree with the target.
    Plus,
    /// Frequency and shape agree, amplitude does not.
    Circle,
    Minus,
}

impl VisualRating {
    pub fn symbol(self) -> &'static str {
        match self {
            VisualRating::Plus => "+",
            VisualRating::Circle => "o",
            VisualRating::Minus => "-",
        }
    }
}

/// Thresholds of the rating proxy. Bounds are inclusive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatingThresholds {
    pub rate: f64,
    pub band: (f64, f64),
    pub freq_tolerance: f64,
    pub amplitude_band: (f64, f64),
    pub max_lag: usize,
    pub plus_correlation: f64,
    pub circle_correlation: f64,
}

impl Default for RatingThresholds {
    fn default() -> Self {
        RatingThresholds {
            rate: TARGET_RATE,
            band: (0.05, 3.0),
            freq_tolerance: 0.1,
            amplitude_band: (0.7, 1.4),
            max_lag: 10,
            plus_correlation: 0.8,
            circle_correlation: 0.6,
        }
    }
}

/// Slack applied to threshold comparisons so values that equal a bound up
/// to rounding count as inside it.
const BOUND_SLACK: f64 = 1e-9;

/// Frequency step of the spectral peak search, in Hz.
const FREQ_STEP: f64 = 0.002;

/// Location of the largest Hann-windowed spectral magnitude within `band`.
pub fn dominant_frequency(x: &[f64], rate: f64, band: (f64, f64)) -> Option<f64> {
    let n = x.len();
    if n < 2 {
        return None;
    }
    let (mean, sd) = mean_sd(x);
    if sd <= DEGENERATE_SD {
        return None;
    }
    let w: Vec<f64> = (0..n)
        .map(|i| {
            let hann = 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos();
            hann * (x[i] - mean)
        })
        .collect();
    let steps = ((band.1 - band.0) / FREQ_STEP).round() as usize;
    let mut best = (band.0, -1.0);
    for s in 0..=steps {
        let f = band.0 + s as f64 * FREQ_STEP;
        let omega = 2.0 * PI * f / rate;
        let (mut re, mut im) = (0.0, 0.0);
        for (i, &v) in w.iter().enumerate() {
            let ph = omega * i as f64;
            re += v * ph.cos();
            im -= v * ph.sin();
        }
        let mag = re * re + im * im;
        if mag > best.1 {
            best = (f, mag);
        }
    }
    Some(best.0)
}

/// Features the rating is derived from; exposed for reporting and tests.
#[derive(Clone, Debug, PartialEq)]
pub struct RatingFeatures {
    pub freq_pred: f64,
    pub freq_target: f64,
    pub amplitude_ratio: f64,
    pub correlation: f64,
}

pub fn rating_features(pred: &[f64], tgt: &[f64], th: &RatingThresholds) -> Result<Option<RatingFeatures>, SigprocError> {
    check_equal_len("visual_rating", pred, tgt)?;
    let (Some(fp), Some(ft)) = (dominant_frequency(pred, th.rate, th.band), dominant_frequency(tgt, th.rate, th.band)) else {
        return Ok(None);
    };
    let ratio = mean_sd(pred).1 / mean_sd(tgt).1;
    let max_lag = th.max_lag.min(pred.len().saturating_sub(2)) as i64;
    let correlation = (-max_lag..=max_lag)
        .filter_map(|l| lagged_pearson(pred, tgt, l))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(Some(RatingFeatures { freq_pred: fp, freq_target: ft, amplitude_ratio: ratio, correlation }))
}

/// Automated stand-in for the human +/o/− rating.
pub fn visual_rating(pred: &[f64], tgt: &[f64], th: &RatingThresholds) -> Result<VisualRating, SigprocError> {
    let Some(f) = rating_features(pred, tgt, th)? else {
        return Ok(VisualRating::Minus);
    };
    let freq_ok = (f.freq_pred - f.freq_target).abs() / f.freq_target <= th.freq_tolerance + BOUND_SLACK;
    let amp_ok = f.amplitude_ratio >= th.amplitude_band.0 - BOUND_SLACK && f.amplitude_ratio <= th.amplitude_band.1 + BOUND_SLACK;
    Ok(if freq_ok && amp_ok && f.correlation >= th.plus_correlation - BOUND_SLACK {
        VisualRating::Plus
    } else if freq_ok && f.correlation >= th.circle_correlation - BOUND_SLACK {
        VisualRating::Circle
    } else {
        VisualRating::Minus
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smooth(n: usize, offset: usize) -> Vec<f64> {
        (offset..offset + n)
            .map(|i| {
                let t = i as f64 / 10.0;
                (2.0 * PI * 0.25 * t).sin() + 0.4 * (2.0 * PI * 0.61 * t + 0.3).sin()
            })
            .collect()
    }

    #[test]
    fn rmse_identities() {
        let x = smooth(128, 0);
        assert_eq!(rmse(&x, &x).unwrap(), 0.0);
        assert_eq!(shifted_rmse(&x, &x, 10).unwrap(), 0.0);
        let y: Vec<f64> = x.iter().map(|v| v + 0.75).collect();
        assert!((rmse(&y, &x).unwrap() - 0.75).abs() < 1e-12);
        assert!(rmse(&x, &x[1..]).is_err());
    }

    #[test]
    fn shifted_rmse_removes_constructed_shift() {
        let long = smooth(140, 0);
        let pred = &long[3..131];
        let tgt = &long[0..128];
        let sd = mean_sd(tgt).1;
        let plain = rmse(pred, tgt).unwrap();
        let shifted = shifted_rmse(pred, tgt, 10).unwrap();
        assert!(shifted < 0.05 * sd);
        assert!(plain > 5.0 * shifted.max(1e-3 * sd));
    }

    #[test]
    fn dtw_small_cases() {
        assert_eq!(dtw(&[1.0, 2.0, 3.0], &[1.0, 2.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(dtw(&[0.0, 3.0], &[1.0]).unwrap(), 3.0);
        let x = smooth(50, 7);
        assert_eq!(dtw(&x, &x).unwrap(), 0.0);
        assert!(dtw(&[], &x).is_err());
    }

    #[test]
    fn rating_identity_scaled_and_noise() {
        let th = RatingThresholds::default();
        let t = smooth(128, 0);
        assert_eq!(visual_rating(&t, &t, &th).unwrap(), VisualRating::Plus);
        let scaled: Vec<f64> = t.iter().map(|v| 0.3 * v).collect();
        assert_eq!(visual_rating(&scaled, &t, &th).unwrap(), VisualRating::Circle);
        let flat = vec![1.0; 128];
        assert_eq!(visual_rating(&flat, &t, &th).unwrap(), VisualRating::Minus);
    }

    #[test]
    fn dominant_frequency_of_sine() {
        let x: Vec<f64> = (0..128).map(|i| (2.0 * PI * 0.3 * i as f64 / 10.0).sin()).collect();
        let f = dominant_frequency(&x, 10.0, (0.05, 3.0)).unwrap();
        assert!((f - 0.3).abs() < 0.01, "{f}");
    }
}
