use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::params::{PatientParams, VentMode};
use super::PhantomError;

/// Integration rate of the respiratory model, Hz.
pub const SIM_RATE: f64 = 100.0;

/// Inspiratory share of each breath cycle.
const INSP_FRACTION: f64 = 1.0 / 3.0;
/// Share of a volume-controlled inspiration spent at constant flow; the rest is an end-inspiratory pause.
const VC_FLOW_FRACTION: f64 = 0.8;
const BREATH_JITTER: f64 = 0.08;
const BEAT_JITTER: f64 = 0.04;
const ES_CARDIAC_RIPPLE: f64 = 0.3;

/// Pressures are rounded to multiples of this step so that the difference
/// `p_aw - p_es` and its sum with `p_es` are exact in both f64 and f32.
const PRESSURE_QUANTUM: f64 = 1.0 / 65536.0;

pub fn quantize_pressure(p: f64) -> f64 {
    (p / PRESSURE_QUANTUM).round() * PRESSURE_QUANTUM
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Phase {
    PcInspiration,
    /// Constant inspiratory flow in l/s.
    VcFlow { flow: f64 },
    VcPause,
    Expiration,
}

/// Single-compartment lung: resistance in series with the lung compliance;
/// passive expiration empties through the series lung/chest-wall compliance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mechanics {
    pub resistance: f64,
    pub compliance: f64,
    pub total_compliance: f64,
    pub peep: f64,
    pub driving_pressure: f64,
}

impl Mechanics {
    pub fn new(p: &PatientParams) -> Self {
        let (c, ccw) = (p.lung_compliance, p.chest_wall_compliance);
        Mechanics {
            resistance: p.resistance,
            compliance: c,
            total_compliance: c * ccw / (c + ccw),
            peep: p.peep,
            driving_pressure: p.driving_pressure,
        }
    }

    /// Flow (l/s) and airway pressure (cmH2O) at volume `v` (ml above end-expiratory volume).
    pub fn evaluate(&self, phase: Phase, v: f64) -> (f64, f64) {
        match phase {
            Phase::PcInspiration => {
                let p_aw = self.peep + self.driving_pressure;
                ((p_aw - v / self.compliance - self.peep) / self.resistance, p_aw)
            }
            Phase::VcFlow { flow } => (flow, self.peep + v / self.compliance + flow * self.resistance),
            Phase::VcPause => (0.0, self.peep + v / self.compliance),
            Phase::Expiration => (-(v / self.total_compliance) / self.resistance, self.peep),
        }
    }

    /// Time constant `R·C` in seconds for the given compliance.
    pub fn time_constant(&self, compliance: f64) -> f64 {
        self.resistance * compliance / 1000.0
    }
}

/// Explicit Euler over a phase sequence at `rate` Hz, starting from `v0` ml.
/// Returns `(volume, flow, p_aw)`, each sample taken before its step.
pub fn integrate(mech: &Mechanics, phases: &[Phase], v0: f64, rate: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let dt = 1.0 / rate;
    let (mut vs, mut fs, mut ps) = (Vec::with_capacity(phases.len()), Vec::with_capacity(phases.len()), Vec::with_capacity(phases.len()));
    let mut v = v0;
    for &phase in phases {
        let (f, p) = mech.evaluate(phase, v);
        vs.push(v);
        fs.push(f);
        ps.push(p);
        v += 1000.0 * f * dt;
    }
    (vs, fs, ps)
}

/// Heartbeat onsets in seconds; the first onset is at or before `t = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct BeatClock {
    pub onsets: Vec<f64>,
}

impl BeatClock {
    fn generate<R: Rng + ?Sized>(heart_rate: f64, duration: f64, rng: &mut R) -> Self {
        let nominal = 60.0 / heart_rate;
        let mut t = -rng.gen_range(0.0..nominal);
        let mut onsets = vec![t];
        while t <= duration + 2.0 {
            t += nominal * (1.0 + rng.gen_range(-BEAT_JITTER..BEAT_JITTER));
            onsets.push(t);
        }
        BeatClock { onsets }
    }

    /// Position within the current beat in `[0, 1)`; before the first onset
    /// the first beat's length is extrapolated backwards.
    pub fn phase(&self, t: f64) -> f64 {
        let k = self.onsets.partition_point(|&o| o <= t);
        let (start, end) = match k {
            0 => (self.onsets[0] - (self.onsets[1] - self.onsets[0]), self.onsets[0]),
            k if k >= self.onsets.len() => {
                let n = self.onsets.len();
                (self.onsets[n - 1], 2.0 * self.onsets[n - 1] - self.onsets[n - 2])
            }
            k => (self.onsets[k - 1], self.onsets[k]),
        };
        ((t - start) / (end - start)).rem_euclid(1.0)
    }

    /// Pulsatile cardiac activity seen in the heart region, in `[0, 1]`.
    pub fn cardiac(&self, t: f64) -> f64 {
        let phi = self.phase(t);
        (-((phi - 0.2) / 0.1).powi(2)).exp()
    }
}

/// Normalized arterial pulse: systolic peak plus a dicrotic wave.
pub fn arterial_template(phi: f64) -> f64 {
    (-((phi - 0.18) / 0.07).powi(2)).exp() + 0.35 * (-((phi - 0.42) / 0.06).powi(2)).exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeristalsisEvent {
    pub start: f64,
    pub duration: f64,
    /// Peak deflection, cmH2O.
    pub amplitude: f64,
}

impl PeristalsisEvent {
    pub fn value(&self, t: f64) -> f64 {
        let u = (t - self.start) / self.duration;
        if u <= 0.0 || u >= 1.0 {
            return 0.0;
        }
        self.amplitude * 0.5 * (1.0 - (2.0 * PI * u).cos())
    }
}

/// All channels on the integration grid, before resampling and lag injection.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSimulation {
    pub rate: f64,
    pub phase: Vec<Phase>,
    pub mode: Vec<VentMode>,
    pub volume: Vec<f64>,
    pub flow: Vec<f64>,
    pub p_aw: Vec<f64>,
    pub p_es: Vec<f64>,
    pub p_tp: Vec<f64>,
    pub p_ab: Vec<f64>,
    /// Peristalsis contribution to `p_es`.
    pub peristalsis: Vec<f64>,
    pub events: Vec<PeristalsisEvent>,
    pub beats: BeatClock,
}

impl RawSimulation {
    pub fn len(&self) -> usize {
        self.volume.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volume.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 / self.rate
    }
}

/// Runs the respiratory, circulatory and esophageal models at [`SIM_RATE`].
pub fn simulate_raw<R: Rng + ?Sized>(params: &PatientParams, duration: f64, rng: &mut R) -> Result<RawSimulation, PhantomError> {
    params.validate()?;
    if !(duration > 0.0) {
        return Err(PhantomError::Params(format!("duration must be positive, got {duration}")));
    }
    let n = (duration * SIM_RATE).round() as usize;
    let dt = 1.0 / SIM_RATE;
    let mech = Mechanics::new(params);

    let mut phase = Vec::with_capacity(n);
    let mut mode = Vec::with_capacity(n);
    let (mut volume, mut flow, mut p_aw) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    let mut v = 0.0;
    while phase.len() < n {
        let period = 60.0 / params.resp_rate * (1.0 + rng.gen_range(-BREATH_JITTER..BREATH_JITTER));
        let n_breath = ((period * SIM_RATE).round() as usize).max(3);
        let n_insp = ((n_breath as f64 * INSP_FRACTION).round() as usize).clamp(1, n_breath - 1);
        let breath_mode = params.mode_at(phase.len() as f64 * dt);
        let n_flow = ((n_insp as f64 * VC_FLOW_FRACTION).round() as usize).max(1);
        let vc_flow = ((params.tidal_volume - v).max(0.0) / 1000.0) / (n_flow as f64 * dt);
        for k in 0..n_breath {
            if phase.len() == n {
                break;
            }
            let ph = match (breath_mode, k < n_insp) {
                (VentMode::Pc, true) => Phase::PcInspiration,
                (VentMode::Vc, true) if k < n_flow => Phase::VcFlow { flow: vc_flow },
                (VentMode::Vc, true) => Phase::VcPause,
                (_, false) => Phase::Expiration,
            };
            let (f, p) = mech.evaluate(ph, v);
            phase.push(ph);
            mode.push(breath_mode);
            volume.push(v);
            flow.push(f);
            p_aw.push(p);
            v += 1000.0 * f * dt;
        }
    }

    let beats = BeatClock::generate(params.heart_rate, duration, rng);
    let events = peristalsis_events(params.peristalsis_rate, duration, rng);

    let mut peristalsis = vec![0.0; n];
    let mut p_es = Vec::with_capacity(n);
    let mut p_ab = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 * dt;
        peristalsis[i] = events.iter().map(|e| e.value(t)).sum();
        p_es.push(volume[i] / params.chest_wall_compliance + ES_CARDIAC_RIPPLE * beats.cardiac(t) + peristalsis[i]);
        p_ab.push(params.diastolic + (params.systolic - params.diastolic) * arterial_template(beats.phase(t - params.arterial_lag)));
    }
    let p_aw: Vec<f64> = p_aw.into_iter().map(quantize_pressure).collect();
    let p_es: Vec<f64> = p_es.into_iter().map(quantize_pressure).collect();
    let p_tp = p_aw.iter().zip(&p_es).map(|(a, e)| a - e).collect();

    Ok(RawSimulation { rate: SIM_RATE, phase, mode, volume, flow, p_aw, p_es, p_tp, p_ab, peristalsis, events, beats })
}

fn peristalsis_events<R: Rng + ?Sized>(rate_per_min: f64, duration: f64, rng: &mut R) -> Vec<PeristalsisEvent> {
    let mut events = Vec::new();
    if rate_per_min <= 0.0 {
        return events;
    }
    let gap = Exp::new(rate_per_min / 60.0).expect("positive rate");
    let mut t = -6.0;
    loop {
        t += gap.sample(rng);
        if t >= duration {
            break;
        }
        events.push(PeristalsisEvent { start: t, duration: rng.gen_range(3.0..6.0), amplitude: rng.gen_range(3.0..8.0) });
    }
    events
}
