//! Synthetic cohort generator: single-compartment respiratory mechanics,
//! circulatory waveforms, EIT frame rendering, device lags, dataset
//! assembly and split protocols.

mod dataset;
mod eit;
mod params;
mod record;
mod simulate;

pub use dataset::{
    build_dataset, crop_segments, derive_seed, global_scaling, make_segment, manifest_for, read_dataset, read_manifest, split,
    tile_segments, write_dataset, CohortConfig, Dataset, Manifest, ManifestEntry, NamedSplit, RecordKey, Segment, Split,
    SplitScheme, TargetScaling, Task, TaskSpec, INTER_MIN_PATIENTS, INTRA_MIN_RECORDS, INTRA_TEST_RECORDS, MANIFEST_VERSION,
    PAB_SHIFT_MAX_LAG, SEGMENT_LEN,
};
pub use eit::{render_eit, Anatomy, EitFrames, EitOptions, FRAME_LEN, FRAME_SIDE};
pub use params::{ModeSpan, PatientParams, VentMode};
pub use record::{
    read_record, simulate_record, simulate_record_detailed, write_record, AlignmentInfo, LagSpec, Record, RecordOptions, LAG_MARGIN,
    MIN_RECORD_DURATION, RECORD_FORMAT_VERSION,
};
pub use simulate::{
    arterial_template, integrate, quantize_pressure, simulate_raw, BeatClock, Mechanics, PeristalsisEvent, Phase, RawSimulation,
    SIM_RATE,
};

use crate::sigproc::SigprocError;

#[derive(Debug, thiserror::Error)]
pub enum PhantomError {
    #[error("invalid patient parameters: {0}")]
    Params(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed data: {0}")]
    Format(String),
    #[error(transparent)]
    Sigproc(#[from] SigprocError),
}
