//! Signal preprocessing, alignment and evaluation metrics.
//!
//! Every function here is pure; inputs are never modified in place except
//! by the explicitly named `_f32` helpers.

mod align;
mod channel;
mod metrics;
pub mod report;
mod resample;
mod standardize;

pub use align::{align_records, estimate_lag, LagEstimate, ALIGN_MAX_LAG, MIN_PEAK_CORRELATION};
pub use channel::{Channel, ChannelId, Device};
pub use metrics::{
    closest_correlation_peak, dominant_frequency, dtw, lagged_pearson, rating_features, rmse, shifted_rmse, visual_rating,
    RatingFeatures, RatingThresholds, VisualRating,
};
pub use report::{score_segment, segment_svg, MetricsReport, RmseKind, SegmentScore, TaskMetrics};
pub use resample::{resample, resample_10hz, TARGET_RATE};
pub use standardize::{mean_sd, standardize, standardize_f32, Standardized, DEGENERATE_SD};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SigprocError {
    #[error("unsupported sample rate {rate} Hz (minimum {min} Hz)")]
    UnsupportedRate { rate: f64, min: f64 },
    #[error("{0}")]
    Usage(String),
    #[error("alignment failed: {0}")]
    Alignment(String),
    #[error("correlation peak {peak:.3} below {threshold}: {what} is unalignable")]
    Unalignable { what: String, peak: f64, threshold: f64 },
}
