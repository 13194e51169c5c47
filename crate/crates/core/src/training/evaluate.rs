use super::trainer::make_batch;
use super::TrainingError;
use crate::nets::Model;
use crate::phantom::{tile_segments, Record, Segment, TargetScaling, TaskSpec, SEGMENT_LEN};
use crate::sigproc::{score_segment, MetricsReport, RatingThresholds, RmseKind, SegmentScore, TaskMetrics};

/// Per-segment evaluation result, kept for plotting.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSegment {
    pub record: usize,
    pub start: usize,
    pub score: SegmentScore,
    /// Primary channel, physical units.
    pub target: Vec<f64>,
    pub prediction: Vec<f64>,
}

/// Predicts and scores the primary output channel of every segment.
///
/// RMSE is taken in physical units for absolute targets and in SD units for
/// per-segment normalized ones (shifted RMSE where the task asks for it);
/// DTW and the visual rating are taken in model units.
pub fn score_segments(
    model: &Model<f32>,
    segments: &[Segment],
    spec: &TaskSpec,
    batch_size: usize,
) -> Result<Vec<ScoredSegment>, TrainingError> {
    let th = RatingThresholds::default();
    let k = spec.outputs.len();
    let absolute = matches!(spec.outputs[0].1, TargetScaling::Global { .. });
    let mut out = Vec::with_capacity(segments.len());
    for chunk in segments.chunks(batch_size.max(1)) {
        let refs: Vec<&Segment> = chunk.iter().collect();
        let (inputs, _) = make_batch(&refs)?;
        let pred = model.predict(&inputs)?;
        for (b, seg) in chunk.iter().enumerate() {
            let t = seg.len;
            let rows = &pred.data()[b * t * k..(b + 1) * t * k];
            let p_model: Vec<f64> = rows.chunks(k).map(|r| r[0] as f64).collect();
            let t_model: Vec<f64> = seg.targets.chunks(k).map(|r| r[0] as f64).collect();
            let p_phys = seg.to_physical(0, &p_model);
            let score = if absolute {
                score_segment(&p_phys, &seg.raw_targets[0], &p_model, &t_model, spec.rmse_max_lag, &th)?
            } else {
                score_segment(&p_model, &t_model, &p_model, &t_model, spec.rmse_max_lag, &th)?
            };
            out.push(ScoredSegment {
                record: seg.record,
                start: seg.start,
                score,
                target: seg.raw_targets[0].clone(),
                prediction: p_phys,
            });
        }
    }
    Ok(out)
}

/// Aggregates [`score_segments`] into a one-row report; no segments, no rows.
pub fn evaluate_segments(
    model: &Model<f32>,
    segments: &[Segment],
    spec: &TaskSpec,
    split: &str,
    batch_size: usize,
) -> Result<MetricsReport, TrainingError> {
    if segments.is_empty() {
        return Ok(MetricsReport::default());
    }
    let scored = score_segments(model, segments, spec, batch_size)?;
    Ok(report_from_scores(&scored, spec, split))
}

pub fn report_from_scores(scored: &[ScoredSegment], spec: &TaskSpec, split: &str) -> MetricsReport {
    if scored.is_empty() {
        return MetricsReport::default();
    }
    let scores: Vec<SegmentScore> = scored.iter().map(|s| s.score).collect();
    let targets: Vec<f64> = scored.iter().flat_map(|s| s.target.iter().copied()).collect();
    let kind = if spec.rmse_max_lag > 0 { RmseKind::Shifted } else { RmseKind::Plain };
    let row =
        TaskMetrics::aggregate(spec.task.as_str(), split, spec.variant.as_str(), spec.primary(), kind, &scores, &targets);
    MetricsReport { rows: vec![row] }
}

/// Non-overlapping 128-frame tiles of the listed records.
pub fn test_segments(records: &[Record], indices: &[usize], spec: &TaskSpec) -> Vec<Segment> {
    indices.iter().flat_map(|&i| tile_segments(&records[i], i, spec, SEGMENT_LEN)).collect()
}

/// Scores the held-out records `indices`; an empty set gives an empty report.
pub fn evaluate(
    model: &Model<f32>,
    records: &[Record],
    indices: &[usize],
    spec: &TaskSpec,
    split: &str,
    batch_size: usize,
) -> Result<MetricsReport, TrainingError> {
    evaluate_segments(model, &test_segments(records, indices, spec), spec, split, batch_size)
}
