use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eit::EitOptions;
use super::params::PatientParams;
use super::record::{read_record, simulate_record, write_record, LagSpec, Record, RecordOptions};
use super::PhantomError;
use crate::nets::Variant;
use crate::sigproc::{standardize, standardize_f32, ChannelId};

pub const MANIFEST_VERSION: u32 = 1;

/// Frames per training/evaluation segment (12.8 s at 10 Hz).
pub const SEGMENT_LEN: usize = 128;

/// Splits `seed` into independent streams.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortConfig {
    pub patients: usize,
    pub records_per_patient: usize,
    /// Seconds per record.
    pub record_duration: f64,
    pub seed: u64,
    pub max_eit_lag: i64,
    pub max_monitor_lag: i64,
    pub eit: EitOptions,
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            patients: 12,
            records_per_patient: 12,
            record_duration: 120.0,
            seed: 0,
            max_eit_lag: 15,
            max_monitor_lag: 30,
            eit: EitOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub cohort: CohortConfig,
    pub patients: Vec<PatientParams>,
    pub records: Vec<Record>,
}

impl Dataset {
    pub fn keys(&self) -> Vec<RecordKey> {
        self.records.iter().map(RecordKey::of).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RecordKey {
    pub patient_id: usize,
    pub record_id: usize,
}

impl RecordKey {
    pub fn of(r: &Record) -> Self {
        RecordKey { patient_id: r.patient_id, record_id: r.record_id }
    }

    pub fn name(&self) -> String {
        format!("p{:03}_r{:03}", self.patient_id, self.record_id)
    }
}

/// Simulates the whole cohort. Each record has its own seed stream, so the
/// result does not depend on generation order.
pub fn build_dataset(cfg: &CohortConfig) -> Result<Dataset, PhantomError> {
    if cfg.patients == 0 || cfg.records_per_patient == 0 {
        return Err(PhantomError::Config("cohort needs at least one patient and one record".into()));
    }
    let opts = RecordOptions {
        lags: LagSpec::Random { max_eit: cfg.max_eit_lag, max_monitor: cfg.max_monitor_lag },
        eit: cfg.eit.clone(),
    };
    let mut patients = Vec::with_capacity(cfg.patients);
    let mut records = Vec::with_capacity(cfg.patients * cfg.records_per_patient);
    for p in 0..cfg.patients {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1, p as u64));
        let params = PatientParams::sample(&mut rng);
        for r in 0..cfg.records_per_patient {
            let rec_params = params.vary_settings(&mut rng);
            let mut rec = simulate_record(&rec_params, cfg.record_duration, derive_seed(cfg.seed, 2 + p as u64, r as u64), &opts)?;
            rec.patient_id = p;
            rec.record_id = r;
            records.push(rec);
        }
        patients.push(params);
    }
    Ok(Dataset { cohort: cfg.clone(), patients, records })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitScheme {
    /// The last three records of every patient are held out.
    IntraPatient,
    /// A tenth of the patients (rounded up) are held out entirely.
    InterPatient,
}

impl std::str::FromStr for SplitScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "intra" | "intra-patient" | "intrapatient" => Ok(SplitScheme::IntraPatient),
            "inter" | "inter-patient" | "interpatient" => Ok(SplitScheme::InterPatient),
            _ => Err(format!("unknown split '{s}' (expected intra-patient or inter-patient)")),
        }
    }
}

/// Indices into the key list, each in ascending order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub const INTRA_TEST_RECORDS: usize = 3;
pub const INTRA_MIN_RECORDS: usize = 4;
pub const INTER_MIN_PATIENTS: usize = 10;

pub fn split(keys: &[RecordKey], scheme: SplitScheme, seed: u64) -> Result<Split, PhantomError> {
    let mut by_patient: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        by_patient.entry(k.patient_id).or_default().push(i);
    }
    let mut test = Vec::new();
    match scheme {
        SplitScheme::IntraPatient => {
            for (p, idx) in &mut by_patient {
                if idx.len() < INTRA_MIN_RECORDS {
                    return Err(PhantomError::Config(format!(
                        "intra-patient split needs at least {INTRA_MIN_RECORDS} records per patient; patient {p} has {}",
                        idx.len()
                    )));
                }
                idx.sort_by_key(|&i| keys[i].record_id);
                test.extend_from_slice(&idx[idx.len() - INTRA_TEST_RECORDS..]);
            }
        }
        SplitScheme::InterPatient => {
            if by_patient.len() < INTER_MIN_PATIENTS {
                return Err(PhantomError::Config(format!(
                    "inter-patient split needs at least {INTER_MIN_PATIENTS} patients, got {}",
                    by_patient.len()
                )));
            }
            let mut ids: Vec<usize> = by_patient.keys().copied().collect();
            ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let n_test = (ids.len() + 9) / 10;
            for p in &ids[..n_test] {
                test.extend_from_slice(&by_patient[p]);
            }
        }
    }
    test.sort_unstable();
    let train = (0..keys.len()).filter(|i| test.binary_search(i).is_err()).collect();
    Ok(Split { train, test })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Absolute volume.
    Volume,
    /// Absolute flow.
    Flow,
    /// Normalized airway pressure.
    Paw,
    /// Normalized arterial blood pressure.
    Pab,
    /// Absolute transpulmonary pressure.
    Ptp,
}

impl Task {
    pub const ALL: [Task; 5] = [Task::Volume, Task::Flow, Task::Paw, Task::Pab, Task::Ptp];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Volume => "volume",
            Task::Flow => "flow",
            Task::Paw => "paw",
            Task::Pab => "pab",
            Task::Ptp => "ptp",
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = match s.to_ascii_lowercase().as_str() {
            "1" | "volume" | "v" => Task::Volume,
            "2" | "flow" | "f" => Task::Flow,
            "3" | "paw" | "p_aw" => Task::Paw,
            "4" | "pab" | "p_ab" => Task::Pab,
            "5" | "ptp" | "p_tp" => Task::Ptp,
            _ => return Err(format!("unknown task '{s}' (expected volume, flow, paw, pab or ptp)")),
        };
        Ok(t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetScaling {
    /// `(x - mean) / sd` with fixed cohort-wide constants.
    Global { mean: f64, sd: f64 },
    /// Standardized within each segment; only the shape is a target.
    PerSegment,
}

/// Global affine constants for the absolute targets, in channel units.
pub fn global_scaling(ch: ChannelId) -> TargetScaling {
    let (mean, sd) = match ch {
        ChannelId::Volume => (180.0, 189.0),
        ChannelId::Flow => (0.0, 0.35),
        ChannelId::Ptp => (11.0, 5.67),
        ChannelId::Paw | ChannelId::PawMonitor => (12.0, 5.0),
        ChannelId::Pes => (2.0, 2.0),
        ChannelId::Pab => (90.0, 20.0),
        ChannelId::EitSum => (0.0, 1.0),
    };
    TargetScaling::Global { mean, sd }
}

/// How a shifted RMSE is computed for a task: `0` means plain RMSE.
pub const PAB_SHIFT_MAX_LAG: usize = 10;

/// Inputs and outputs of one task/variant combination.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task: Task,
    pub variant: Variant,
    pub outputs: Vec<(ChannelId, TargetScaling)>,
    pub aux_paw: bool,
    /// Lag window of the shifted RMSE; zero for plain RMSE.
    pub rmse_max_lag: usize,
}

impl TaskSpec {
    pub fn new(task: Task, variant: Variant) -> Result<Self, PhantomError> {
        if task != Task::Ptp && variant != Variant::EitOnly {
            return Err(PhantomError::Config(format!("variant {variant} applies to the ptp task only, not {task}")));
        }
        let g = global_scaling;
        let (outputs, aux_paw) = match (task, variant) {
            (Task::Volume, _) => (vec![(ChannelId::Volume, g(ChannelId::Volume))], false),
            (Task::Flow, _) => (vec![(ChannelId::Flow, g(ChannelId::Flow))], false),
            (Task::Paw, _) => (vec![(ChannelId::Paw, TargetScaling::PerSegment)], false),
            (Task::Pab, _) => (vec![(ChannelId::Pab, TargetScaling::PerSegment)], false),
            (Task::Ptp, Variant::EitOnly) => (vec![(ChannelId::Ptp, g(ChannelId::Ptp))], false),
            (Task::Ptp, Variant::EitJointOutputs) => {
                (vec![(ChannelId::Ptp, g(ChannelId::Ptp)), (ChannelId::Paw, g(ChannelId::Paw))], false)
            }
            (Task::Ptp, Variant::EitPlusPaw) => (vec![(ChannelId::Ptp, g(ChannelId::Ptp))], true),
        };
        let rmse_max_lag = if task == Task::Pab { PAB_SHIFT_MAX_LAG } else { 0 };
        Ok(TaskSpec { task, variant, outputs, aux_paw, rmse_max_lag })
    }

    pub fn output_channels(&self) -> Vec<ChannelId> {
        self.outputs.iter().map(|(c, _)| *c).collect()
    }

    /// The evaluated channel; secondary joint outputs are auxiliary targets.
    pub fn primary(&self) -> ChannelId {
        self.outputs[0].0
    }

    pub fn required_channels(&self) -> Vec<ChannelId> {
        let mut v = self.output_channels();
        if self.aux_paw {
            v.push(ChannelId::Paw);
        }
        v
    }
}

/// A 128-frame model input with its targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub record: usize,
    pub start: usize,
    pub len: usize,
    /// `[len, 32, 32]`, standardized over the whole segment.
    pub eit: Vec<f32>,
    pub eit_degenerate: bool,
    /// `[len, K]` in model units.
    pub targets: Vec<f32>,
    /// Per output channel, physical units.
    pub raw_targets: Vec<Vec<f64>>,
    /// Per output channel `(offset, scale)`: physical = model · scale + offset.
    pub scales: Vec<(f64, f64)>,
    /// Absolute airway pressure, cmH2O.
    pub aux_paw: Option<Vec<f32>>,
}

impl Segment {
    pub fn channels(&self) -> usize {
        self.raw_targets.len()
    }

    /// Model-unit predictions of channel `k` mapped back to physical units.
    pub fn to_physical(&self, k: usize, model: &[f64]) -> Vec<f64> {
        let (offset, scale) = self.scales[k];
        model.iter().map(|v| v * scale + offset).collect()
    }
}

/// Builds the segment starting at frame `start`. `None` (with a warning)
/// when the record is too short or lacks a required channel.
pub fn make_segment(rec: &Record, record: usize, spec: &TaskSpec, start: usize, len: usize) -> Option<Segment> {
    if start + len > rec.len() {
        log::warn!("{}: {} frames, segment {start}..{} out of range; skipped", rec.name(), rec.len(), start + len);
        return None;
    }
    for ch in spec.required_channels() {
        if rec.channel(ch).is_none() {
            log::warn!("{}: channel {ch} missing; skipped", rec.name());
            return None;
        }
    }
    let mut eit = rec.eit.window(start, len).to_vec();
    let (_, _, eit_degenerate) = standardize_f32(&mut eit).expect("non-empty window");
    let k = spec.outputs.len();
    let mut targets = vec![0.0f32; len * k];
    let mut raw_targets = Vec::with_capacity(k);
    let mut scales = Vec::with_capacity(k);
    for (j, (ch, scaling)) in spec.outputs.iter().enumerate() {
        let raw = rec.samples(*ch).expect("checked above")[start..start + len].to_vec();
        let (model, offset, scale) = match *scaling {
            TargetScaling::Global { mean, sd } => (raw.iter().map(|v| (v - mean) / sd).collect::<Vec<_>>(), mean, sd),
            TargetScaling::PerSegment => {
                let s = standardize(&raw).expect("non-empty window");
                (s.values, s.mean, s.sd)
            }
        };
        for (t, v) in model.iter().enumerate() {
            targets[t * k + j] = *v as f32;
        }
        raw_targets.push(raw);
        scales.push((offset, scale));
    }
    let aux_paw = spec
        .aux_paw
        .then(|| rec.samples(ChannelId::Paw).expect("checked above")[start..start + len].iter().map(|&v| v as f32).collect());
    Some(Segment { record, start, len, eit, eit_degenerate, targets, raw_targets, scales, aux_paw })
}

/// `n_crops` random crops of `len` frames.
pub fn crop_segments<R: Rng + ?Sized>(
    rec: &Record,
    record: usize,
    spec: &TaskSpec,
    n_crops: usize,
    len: usize,
    rng: &mut R,
) -> Vec<Segment> {
    if rec.len() < len {
        log::warn!("{}: {} frames is shorter than one {len}-frame crop; skipped", rec.name(), rec.len());
        return Vec::new();
    }
    (0..n_crops).filter_map(|_| make_segment(rec, record, spec, rng.gen_range(0..=rec.len() - len), len)).collect()
}

/// Non-overlapping `len`-frame tiles from the start of the record.
pub fn tile_segments(rec: &Record, record: usize, spec: &TaskSpec, len: usize) -> Vec<Segment> {
    (0..rec.len() / len).filter_map(|i| make_segment(rec, record, spec, i * len, len)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    #[serde(flatten)]
    pub key: RecordKey,
    pub dir: String,
    pub frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub cohort: CohortConfig,
    pub aligned: bool,
    pub records: Vec<ManifestEntry>,
    /// Splits valid for this cohort, keyed by scheme name.
    pub splits: BTreeMap<String, NamedSplit>,
}

impl Manifest {
    pub fn keys(&self) -> Vec<RecordKey> {
        self.records.iter().map(|e| e.key).collect()
    }
}

fn scheme_name(s: SplitScheme) -> &'static str {
    match s {
        SplitScheme::IntraPatient => "intra-patient",
        SplitScheme::InterPatient => "inter-patient",
    }
}

pub fn manifest_for(cohort: &CohortConfig, records: &[Record], aligned: bool) -> Manifest {
    let keys: Vec<RecordKey> = records.iter().map(RecordKey::of).collect();
    let mut splits = BTreeMap::new();
    for scheme in [SplitScheme::IntraPatient, SplitScheme::InterPatient] {
        if let Ok(s) = split(&keys, scheme, cohort.seed) {
            let names = |idx: &[usize]| idx.iter().map(|&i| keys[i].name()).collect();
            splits.insert(scheme_name(scheme).to_string(), NamedSplit { train: names(&s.train), test: names(&s.test) });
        }
    }
    let entries = records
        .iter()
        .map(|r| ManifestEntry { key: RecordKey::of(r), dir: r.name(), frames: r.len() })
        .collect();
    Manifest { format_version: MANIFEST_VERSION, cohort: cohort.clone(), aligned, records: entries, splits }
}

/// Writes every record directory, then `manifest.json` last so a failed
/// write never leaves a manifest pointing at missing records.
pub fn write_dataset(cohort: &CohortConfig, records: &[Record], aligned: bool, dir: &Path) -> Result<Manifest, PhantomError> {
    fs::create_dir_all(dir).map_err(|source| PhantomError::Io { path: dir.display().to_string(), source })?;
    for r in records {
        write_record(r, &dir.join(r.name()))?;
    }
    let manifest = manifest_for(cohort, records, aligned);
    let path = dir.join("manifest.json");
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| PhantomError::Format(e.to_string()))?;
    fs::write(&path, json).map_err(|source| PhantomError::Io { path: path.display().to_string(), source })?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, PhantomError> {
    let path = dir.join("manifest.json");
    let text = fs::read(&path).map_err(|source| PhantomError::Io { path: path.display().to_string(), source })?;
    let m: Manifest = serde_json::from_slice(&text).map_err(|e| PhantomError::Format(format!("{}: {e}", path.display())))?;
    if m.format_version != MANIFEST_VERSION {
        return Err(PhantomError::Format(format!("{}: unsupported manifest version {}", path.display(), m.format_version)));
    }
    Ok(m)
}

/// Loads all records listed in the manifest, in manifest order.
pub fn read_dataset(dir: &Path) -> Result<(Manifest, Vec<Record>), PhantomError> {
    let m = read_manifest(dir)?;
    let records = m.records.iter().map(|e| read_record(&dir.join(&e.dir))).collect::<Result<Vec<_>, _>>()?;
    Ok((m, records))
}

