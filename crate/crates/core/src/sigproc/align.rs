use std::collections::BTreeMap;

use super::metrics::lagged_pearson;
use super::{ChannelId, Device, SigprocError};
use crate::phantom::{AlignmentInfo, Record};

/// Search window of [`align_records`], in samples.
pub const ALIGN_MAX_LAG: usize = 40;

/// Below this peak correlation a device counts as unalignable.
pub const MIN_PEAK_CORRELATION: f64 = 0.2;

/// Correlations closer than this count as equal maxima.
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LagEstimate {
    /// `b[i + lag]` best matches `a[i]`; positive when `b` is delayed.
    pub lag: i64,
    pub correlation: f64,
}

/// Lag in `[-max_lag, max_lag]` maximizing the Pearson correlation of the
/// overlapping parts. Equal maxima resolve to the smaller `|lag|`, then to
/// the negative one. Lags with fewer than two overlapping samples or a
/// constant overlap are skipped.
pub fn estimate_lag(a: &[f64], b: &[f64], max_lag: usize) -> Result<LagEstimate, SigprocError> {
    if max_lag >= a.len().min(b.len()) {
        return Err(SigprocError::Usage(format!(
            "estimate_lag: max_lag {max_lag} must be below the shorter length {}",
            a.len().min(b.len())
        )));
    }
    let mut best: Option<LagEstimate> = None;
    let m = max_lag as i64;
    let order = std::iter::once(0).chain((1..=m).flat_map(|k| [-k, k]));
    for lag in order {
        if let Some(c) = lagged_pearson(a, b, lag) {
            if best.map_or(true, |b| c > b.correlation + TIE_TOLERANCE) {
                best = Some(LagEstimate { lag, correlation: c });
            }
        }
    }
    best.ok_or_else(|| SigprocError::Alignment("no lag has a defined correlation".into()))
}

/// Aligns the EIT frames to the ventilator volume and the monitor channels
/// to the ventilator airway pressure via the monitor's own pressure copy,
/// then trims everything to the common window. Residual lags are estimated
/// again on the result and stored with the record.
///
/// A monitor whose correlation peak is below [`MIN_PEAK_CORRELATION`] is
/// dropped (its channels are removed and it is listed as unalignable); an
/// unalignable EIT stream is an error.
pub fn align_records(rec: &Record) -> Result<Record, SigprocError> {
    let vent_volume = rec
        .samples(ChannelId::Volume)
        .ok_or_else(|| SigprocError::Alignment(format!("{}: no volume channel", rec.name())))?;
    let eit_sum = rec.eit.sums();
    let eit = estimate_lag(vent_volume, &eit_sum, ALIGN_MAX_LAG)?;
    if eit.correlation < MIN_PEAK_CORRELATION {
        return Err(SigprocError::Unalignable {
            what: format!("{} EIT stream", rec.name()),
            peak: eit.correlation,
            threshold: MIN_PEAK_CORRELATION,
        });
    }
    let mut lags = BTreeMap::from([(Device::Ventilator, 0i64), (Device::Eit, eit.lag)]);
    let mut peaks = BTreeMap::from([(Device::Eit, eit.correlation)]);
    let mut unalignable = Vec::new();

    let monitor_channels: Vec<ChannelId> = rec.channels.keys().copied().filter(|c| c.device() == Device::Monitor).collect();
    if !monitor_channels.is_empty() {
        let paw = rec.samples(ChannelId::Paw);
        let copy = rec.samples(ChannelId::PawMonitor);
        let est = match (paw, copy) {
            (Some(p), Some(c)) => estimate_lag(p, c, ALIGN_MAX_LAG).ok(),
            _ => None,
        };
        match est {
            Some(e) if e.correlation >= MIN_PEAK_CORRELATION => {
                lags.insert(Device::Monitor, e.lag);
                peaks.insert(Device::Monitor, e.correlation);
            }
            other => {
                let peak = other.map_or(f64::NAN, |e| e.correlation);
                log::warn!("{}: monitor unalignable (peak correlation {peak:.3}); its channels are dropped", rec.name());
                peaks.insert(Device::Monitor, peak);
                unalignable.push(Device::Monitor);
            }
        }
    }

    let lo = lags.values().copied().min().unwrap_or(0).min(0);
    let hi = lags.values().copied().max().unwrap_or(0).max(0);
    let len = rec.len() as i64 - (hi - lo);
    if len < 2 {
        return Err(SigprocError::Alignment(format!("{}: nothing left after removing lags {lags:?}", rec.name())));
    }
    let len = len as usize;
    let offset = |d: Device| (lags[&d] - lo) as usize;

    let mut channels = BTreeMap::new();
    for (id, ch) in &rec.channels {
        let dev = id.device();
        if unalignable.contains(&dev) {
            continue;
        }
        let o = offset(dev);
        let mut c = ch.clone();
        c.samples = ch.samples[o..o + len].to_vec();
        channels.insert(*id, c);
    }
    let eit_frames = rec.eit.slice(offset(Device::Eit), len);

    let mut out = Record { eit: eit_frames, channels, alignment: None, ..rec.clone() };
    let mut residual = BTreeMap::from([(Device::Ventilator, 0)]);
    residual.insert(Device::Eit, estimate_lag(out.samples(ChannelId::Volume).unwrap(), &out.eit.sums(), ALIGN_MAX_LAG.min(len - 1))?.lag);
    if let (Some(p), Some(c)) = (out.samples(ChannelId::Paw), out.samples(ChannelId::PawMonitor)) {
        residual.insert(Device::Monitor, estimate_lag(p, c, ALIGN_MAX_LAG.min(len - 1))?.lag);
    }
    out.alignment = Some(AlignmentInfo { estimated: lags, residual, peak_correlation: peaks, unalignable });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn band_limited(n: usize, seed: u64) -> Vec<f64> {
        // Sum of incommensurate sines: smooth, aperiodic over the window.
        let s = seed as f64;
        (0..n)
            .map(|i| {
                let t = i as f64 / 10.0;
                (0.31 * t + s).sin() + 0.7 * (0.83 * t + 2.0 * s).sin() + 0.4 * (1.71 * t + 0.5 * s).sin()
            })
            .collect()
    }

    #[test]
    fn constructed_shift_and_identity() {
        let x = band_limited(300, 1);
        let a = &x[20..220];
        let b = &x[15..215];
        assert_eq!(estimate_lag(a, b, 10).unwrap().lag, 5);
        assert_eq!(estimate_lag(a, a, 10).unwrap().lag, 0);
    }

    #[test]
    fn equal_maxima_prefer_smaller_lag() {
        // Period 20: lags -18 and +2 give the same correlation on an exact sine.
        let a: Vec<f64> = (0..400).map(|i| (2.0 * std::f64::consts::PI * i as f64 / 20.0).sin()).collect();
        let b: Vec<f64> = (0..400).map(|i| (2.0 * std::f64::consts::PI * (i as f64 - 22.0) / 20.0).sin()).collect();
        let est = estimate_lag(&a, &b, 25).unwrap();
        assert_eq!(est.lag, 2);
    }

    #[test]
    fn rejects_oversized_window() {
        assert!(estimate_lag(&[1.0, 2.0], &[1.0, 2.0], 2).is_err());
        assert!(matches!(estimate_lag(&[1.0; 10], &[1.0; 10], 3), Err(SigprocError::Alignment(_))));
    }
}
