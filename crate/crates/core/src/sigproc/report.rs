//! Metrics aggregation and report emission (CSV, JSON, SVG).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{dtw, rmse, shifted_rmse, visual_rating, RatingThresholds, VisualRating};
use super::standardize::mean_sd;
use super::{ChannelId, SigprocError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RmseKind {
    Plain,
    Shifted,
}

impl RmseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RmseKind::Plain => "plain",
            RmseKind::Shifted => "shifted",
        }
    }
}

/// Metrics of one evaluated segment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegmentScore {
    pub rmse: f64,
    pub dtw: f64,
    pub rating: VisualRating,
}

/// Scores one segment. `rmse` is taken on the `*_rmse` pair, DTW and the
/// rating on the `*_shape` pair, so callers choose the units of each.
pub fn score_segment(
    pred_rmse: &[f64],
    tgt_rmse: &[f64],
    pred_shape: &[f64],
    tgt_shape: &[f64],
    rmse_max_lag: usize,
    th: &RatingThresholds,
) -> Result<SegmentScore, SigprocError> {
    let r = if rmse_max_lag == 0 { rmse(pred_rmse, tgt_rmse)? } else { shifted_rmse(pred_rmse, tgt_rmse, rmse_max_lag)? };
    Ok(SegmentScore { rmse: r, dtw: dtw(pred_shape, tgt_shape)?, rating: visual_rating(pred_shape, tgt_shape, th)? })
}

/// One row of the report: a task/split/variant/channel combination.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: String,
    pub split: String,
    pub variant: String,
    pub channel: ChannelId,
    pub segments: usize,
    pub rmse_kind: RmseKind,
    /// Mean over segments of the per-segment RMSE.
    pub rmse: f64,
    /// Mean over segments of the per-segment DTW cost.
    pub dtw: f64,
    pub plus: usize,
    pub circle: usize,
    pub minus: usize,
    /// Statistics of the target over all evaluated samples, physical units.
    pub target_mean: f64,
    pub target_sd: f64,
}

impl TaskMetrics {
    /// Aggregates segment scores; `targets` are the physical target samples
    /// of every evaluated segment.
    pub fn aggregate(
        task: &str,
        split: &str,
        variant: &str,
        channel: ChannelId,
        rmse_kind: RmseKind,
        scores: &[SegmentScore],
        targets: &[f64],
    ) -> Self {
        let n = scores.len();
        let mean = |f: &dyn Fn(&SegmentScore) -> f64| if n == 0 { f64::NAN } else { scores.iter().map(f).sum::<f64>() / n as f64 };
        let count = |r: VisualRating| scores.iter().filter(|s| s.rating == r).count();
        let (target_mean, target_sd) = if targets.is_empty() { (f64::NAN, f64::NAN) } else { mean_sd(targets) };
        TaskMetrics {
            task: task.into(),
            split: split.into(),
            variant: variant.into(),
            channel,
            segments: n,
            rmse_kind,
            rmse: mean(&|s| s.rmse),
            dtw: mean(&|s| s.dtw),
            plus: count(VisualRating::Plus),
            circle: count(VisualRating::Circle),
            minus: count(VisualRating::Minus),
            target_mean,
            target_sd,
        }
    }

    pub fn plus_rate(&self) -> f64 {
        if self.segments == 0 {
            0.0
        } else {
            self.plus as f64 / self.segments as f64
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<TaskMetrics>,
}

pub const CSV_HEADER: &str = "task,split,variant,channel,segments,rmse_kind,rmse,dtw,plus,circle,minus,target_mean,target_sd";

impl MetricsReport {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn extend(&mut self, other: MetricsReport) {
        self.rows.extend(other.rows);
    }

    /// Fixed-precision CSV, one row per task × split × variant.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{:.6},{:.6},{},{},{},{:.6},{:.6}",
                r.task,
                r.split,
                r.variant,
                r.channel,
                r.segments,
                r.rmse_kind.as_str(),
                r.rmse,
                r.dtw,
                r.plus,
                r.circle,
                r.minus,
                r.target_mean,
                r.target_sd
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Target-vs-prediction line plot of one segment at 10 Hz.
pub fn segment_svg(title: &str, unit: &str, target: &[f64], pred: &[f64], rating: VisualRating) -> String {
    const W: f64 = 640.0;
    const H: f64 = 240.0;
    const ML: f64 = 56.0;
    const MR: f64 = 16.0;
    const MT: f64 = 28.0;
    const MB: f64 = 36.0;
    let n = target.len().max(pred.len()).max(2);
    let all = target.iter().chain(pred).copied().filter(|v| v.is_finite());
    let (mut lo, mut hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let x = |i: usize| ML + (W - ML - MR) * i as f64 / (n - 1) as f64;
    let y = |v: f64| MT + (H - MT - MB) * (hi - v) / (hi - lo);
    let path = |v: &[f64]| {
        v.iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(i, &v)| format!("{:.2},{:.2}", x(i), y(v)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{ML}" y="18" font-size="13">{} [{}]</text>"#, xml_escape(title), rating.symbol());
    let _ = writeln!(
        s,
        r##"<rect x="{ML}" y="{MT}" width="{}" height="{}" fill="none" stroke="#999"/>"##,
        W - ML - MR,
        H - MT - MB
    );
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{:.3}</text>"#, ML - 4.0, y(v) + 4.0, v);
    }
    for sec in (0..=((n - 1) / 10)).step_by(2) {
        let _ = writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">{sec}</text>"#, x(sec * 10), H - MB + 14.0);
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">time [s]</text>"#, (ML + W - MR) / 2.0, H - 6.0);
    let _ = writeln!(s, r#"<text x="14" y="{:.2}" transform="rotate(-90 14 {:.2})" text-anchor="middle">{}</text>"#, H / 2.0, H / 2.0, xml_escape(unit));
    let _ = writeln!(s, r#"<polyline fill="none" stroke="black" stroke-width="1.5" points="{}"/>"#, path(target));
    let _ = writeln!(s, r##"<polyline fill="none" stroke="#d62728" stroke-width="1.5" stroke-dasharray="5,3" points="{}"/>"##, path(pred));
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">target: black, prediction: red dashed</text>"#, W - MR, MT - 6.0);
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
