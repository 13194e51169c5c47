use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eit::{render_eit, Anatomy, EitFrames, EitOptions, FRAME_LEN};
use super::params::PatientParams;
use super::simulate::{quantize_pressure, simulate_raw, RawSimulation};
use super::PhantomError;
use crate::sigproc::{resample, Channel, ChannelId, Device, TARGET_RATE};

pub const RECORD_FORMAT_VERSION: u32 = 1;

/// Extra samples simulated on each side so device lags never need padding.
pub const LAG_MARGIN: usize = 40;

pub const MIN_RECORD_DURATION: f64 = 30.0;

/// Device clock offsets. A device with lag `L` reports at index `i` what
/// the ventilator reports at `i - L`; the ventilator is the reference.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LagSpec {
    Fixed { eit: i64, monitor: i64 },
    Random { max_eit: i64, max_monitor: i64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordOptions {
    pub lags: LagSpec,
    pub eit: EitOptions,
}

impl Default for RecordOptions {
    fn default() -> Self {
        RecordOptions { lags: LagSpec::Random { max_eit: 15, max_monitor: 30 }, eit: EitOptions::default() }
    }
}

/// Outcome of [`crate::sigproc::align_records`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentInfo {
    pub estimated: BTreeMap<Device, i64>,
    pub residual: BTreeMap<Device, i64>,
    pub peak_correlation: BTreeMap<Device, f64>,
    /// Devices whose channels were dropped because they could not be aligned.
    pub unalignable: Vec<Device>,
}

/// One synthetic recording at 10 Hz.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub patient_id: usize,
    pub record_id: usize,
    pub seed: u64,
    pub rate: f64,
    pub params: PatientParams,
    pub eit: EitFrames,
    pub channels: BTreeMap<ChannelId, Channel>,
    pub injected_lags: BTreeMap<Device, i64>,
    pub alignment: Option<AlignmentInfo>,
}

impl Record {
    pub fn len(&self) -> usize {
        self.eit.frames()
    }

    pub fn is_empty(&self) -> bool {
        self.eit.frames() == 0
    }

    pub fn channel(&self, id: ChannelId) -> Option<&Channel> {
        self.channels.get(&id)
    }

    pub fn samples(&self, id: ChannelId) -> Option<&[f64]> {
        self.channels.get(&id).map(|c| c.samples.as_slice())
    }

    pub fn eit_sum(&self) -> Channel {
        Channel::new(ChannelId::EitSum, self.eit.sums(), self.rate)
    }

    pub fn name(&self) -> String {
        format!("p{:03}_r{:03}", self.patient_id, self.record_id)
    }
}

/// Simulates one record of `duration` seconds, resamples every channel to
/// 10 Hz, renders EIT frames and injects the device lags.
pub fn simulate_record(
    params: &PatientParams,
    duration: f64,
    seed: u64,
    opts: &RecordOptions,
) -> Result<Record, PhantomError> {
    simulate_record_detailed(params, duration, seed, opts).map(|(r, _)| r)
}

/// [`simulate_record`] plus the underlying 100 Hz simulation, which covers
/// `2 · LAG_MARGIN` extra samples at 10 Hz around the record window.
pub fn simulate_record_detailed(
    params: &PatientParams,
    duration: f64,
    seed: u64,
    opts: &RecordOptions,
) -> Result<(Record, RawSimulation), PhantomError> {
    params.validate()?;
    if !(duration >= MIN_RECORD_DURATION) {
        return Err(PhantomError::Params(format!("record duration {duration} s below {MIN_RECORD_DURATION} s")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (eit_lag, monitor_lag) = match opts.lags {
        LagSpec::Fixed { eit, monitor } => (eit, monitor),
        LagSpec::Random { max_eit, max_monitor } => {
            (rng.gen_range(-max_eit..=max_eit), rng.gen_range(-max_monitor..=max_monitor))
        }
    };
    for lag in [eit_lag, monitor_lag] {
        if lag.unsigned_abs() as usize > LAG_MARGIN {
            return Err(PhantomError::Params(format!("lag {lag} exceeds the simulated margin of {LAG_MARGIN} samples")));
        }
    }

    let n = (duration * TARGET_RATE).round() as usize;
    let n_ext = n + 2 * LAG_MARGIN;
    let raw = simulate_raw(params, n_ext as f64 / TARGET_RATE, &mut rng)?;
    let down = |x: &[f64]| -> Result<Vec<f64>, PhantomError> {
        let mut y = resample(x, raw.rate, TARGET_RATE)?;
        y.truncate(n_ext);
        Ok(y)
    };
    let volume = down(&raw.volume)?;
    let flow = down(&raw.flow)?;
    let p_aw: Vec<f64> = down(&raw.p_aw)?.into_iter().map(quantize_pressure).collect();
    let p_es: Vec<f64> = down(&raw.p_es)?.into_iter().map(quantize_pressure).collect();
    let p_tp: Vec<f64> = p_aw.iter().zip(&p_es).map(|(a, e)| a - e).collect();
    let p_ab = down(&raw.p_ab)?;
    if volume.len() < n_ext {
        return Err(PhantomError::Params("simulation shorter than requested".into()));
    }

    let anatomy = Anatomy::from_seed(params.anatomy_seed);
    let cardiac = |t: f64| raw.beats.cardiac(t);
    let frames = render_eit(&volume, &cardiac, TARGET_RATE, &anatomy, &opts.eit, &mut rng);

    let take = |x: &[f64], lag: i64| -> Vec<f64> {
        let start = (LAG_MARGIN as i64 - lag) as usize;
        x[start..start + n].to_vec()
    };
    let mut channels = BTreeMap::new();
    // Rounded to the storage precision so in-memory and on-disk records agree.
    let mut put = |id: ChannelId, x: Vec<f64>| {
        let x = x.into_iter().map(|v| v as f32 as f64).collect();
        channels.insert(id, Channel::new(id, x, TARGET_RATE));
    };
    put(ChannelId::Volume, take(&volume, 0));
    put(ChannelId::Flow, take(&flow, 0));
    put(ChannelId::Paw, take(&p_aw, 0));
    put(ChannelId::PawMonitor, take(&p_aw, monitor_lag));
    put(ChannelId::Pes, take(&p_es, monitor_lag));
    put(ChannelId::Ptp, take(&p_tp, monitor_lag));
    put(ChannelId::Pab, take(&p_ab, monitor_lag));
    let eit = frames.slice((LAG_MARGIN as i64 - eit_lag) as usize, n);

    let injected_lags = BTreeMap::from([(Device::Eit, eit_lag), (Device::Ventilator, 0), (Device::Monitor, monitor_lag)]);
    let rec = Record {
        patient_id: 0,
        record_id: 0,
        seed,
        rate: TARGET_RATE,
        params: params.clone(),
        eit,
        channels,
        injected_lags,
        alignment: None,
    };
    Ok((rec, raw))
}

#[derive(Serialize, Deserialize)]
struct ChannelMeta {
    id: ChannelId,
    unit: String,
    rate: f64,
    len: usize,
    file: String,
}

#[derive(Serialize, Deserialize)]
struct RecordMeta {
    format_version: u32,
    patient_id: usize,
    record_id: usize,
    seed: u64,
    rate: f64,
    frames: usize,
    params: PatientParams,
    injected_lags: BTreeMap<Device, i64>,
    alignment: Option<AlignmentInfo>,
    channels: Vec<ChannelMeta>,
    eit_file: String,
}

const EIT_FILE: &str = "eit.bin";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PhantomError + '_ {
    move |source| PhantomError::Io { path: path.display().to_string(), source }
}

fn write_f32(path: &Path, values: impl Iterator<Item = f32>) -> Result<(), PhantomError> {
    let mut buf = Vec::new();
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&buf).map_err(io_err(path))
}

fn read_f32(path: &Path, expected: usize) -> Result<Vec<f32>, PhantomError> {
    let mut buf = Vec::new();
    fs::File::open(path).map_err(io_err(path))?.read_to_end(&mut buf).map_err(io_err(path))?;
    if buf.len() != expected * 4 {
        return Err(PhantomError::Format(format!("{}: expected {} floats, found {} bytes", path.display(), expected, buf.len())));
    }
    Ok(buf.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect())
}

/// Writes `meta.json`, one `<channel>.bin` per channel and `eit.bin`, all
/// little-endian f32. Channel samples are stored at 32-bit precision.
pub fn write_record(rec: &Record, dir: &Path) -> Result<(), PhantomError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut channels = Vec::new();
    for ch in rec.channels.values() {
        let file = format!("{}.bin", ch.id.as_str());
        write_f32(&dir.join(&file), ch.samples.iter().map(|&v| v as f32))?;
        channels.push(ChannelMeta { id: ch.id, unit: ch.unit.clone(), rate: ch.rate, len: ch.len(), file });
    }
    write_f32(&dir.join(EIT_FILE), rec.eit.data().iter().copied())?;
    let meta = RecordMeta {
        format_version: RECORD_FORMAT_VERSION,
        patient_id: rec.patient_id,
        record_id: rec.record_id,
        seed: rec.seed,
        rate: rec.rate,
        frames: rec.eit.frames(),
        params: rec.params.clone(),
        injected_lags: rec.injected_lags.clone(),
        alignment: rec.alignment.clone(),
        channels,
        eit_file: EIT_FILE.into(),
    };
    let path = dir.join("meta.json");
    let json = serde_json::to_vec_pretty(&meta).map_err(|e| PhantomError::Format(e.to_string()))?;
    fs::write(&path, json).map_err(io_err(&path))
}

pub fn read_record(dir: &Path) -> Result<Record, PhantomError> {
    let path = dir.join("meta.json");
    let text = fs::read(&path).map_err(io_err(&path))?;
    let meta: RecordMeta =
        serde_json::from_slice(&text).map_err(|e| PhantomError::Format(format!("{}: {e}", path.display())))?;
    if meta.format_version != RECORD_FORMAT_VERSION {
        return Err(PhantomError::Format(format!(
            "{}: unsupported record format version {}",
            path.display(),
            meta.format_version
        )));
    }
    let mut channels = BTreeMap::new();
    for cm in meta.channels {
        let samples = read_f32(&dir.join(&cm.file), cm.len)?.into_iter().map(f64::from).collect();
        channels.insert(cm.id, Channel { id: cm.id, samples, rate: cm.rate, unit: cm.unit });
    }
    let data = read_f32(&dir.join(&meta.eit_file), meta.frames * FRAME_LEN)?;
    let eit = EitFrames::new(meta.frames, data).expect("length checked on read");
    Ok(Record {
        patient_id: meta.patient_id,
        record_id: meta.record_id,
        seed: meta.seed,
        rate: meta.rate,
        params: meta.params,
        eit,
        channels,
        injected_lags: meta.injected_lags,
        alignment: meta.alignment,
    })
}
