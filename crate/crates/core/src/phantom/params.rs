use rand::Rng;
use serde::{Deserialize, Serialize};

use super::PhantomError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VentMode {
    /// Pressure controlled: constant airway pressure during inspiration.
    #[serde(rename = "PC")]
    Pc,
    /// Volume controlled: constant flow until the tidal volume is delivered.
    #[serde(rename = "VC")]
    Vc,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeSpan {
    pub mode: VentMode,
    /// Seconds.
    pub duration: f64,
}

/// Physiological and geometric parameters of one synthetic patient.
///
/// Units: resistance cmH2O·s/l, compliances ml/cmH2O, pressures cmH2O,
/// arterial pressures mmHg, volumes ml, rates per minute, lag in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientParams {
    pub resistance: f64,
    pub lung_compliance: f64,
    pub chest_wall_compliance: f64,
    pub resp_rate: f64,
    pub heart_rate: f64,
    pub peep: f64,
    pub driving_pressure: f64,
    pub tidal_volume: f64,
    pub arterial_lag: f64,
    pub systolic: f64,
    pub diastolic: f64,
    pub anatomy_seed: u64,
    pub peristalsis_rate: f64,
    /// Cycled for the whole record; the mode of a breath is the one active at its onset.
    pub mode_schedule: Vec<ModeSpan>,
}

impl PatientParams {
    /// A fixed, mid-range patient used by tests and examples.
    pub fn reference() -> Self {
        PatientParams {
            resistance: 10.0,
            lung_compliance: 50.0,
            chest_wall_compliance: 150.0,
            resp_rate: 15.0,
            heart_rate: 80.0,
            peep: 5.0,
            driving_pressure: 15.0,
            tidal_volume: 500.0,
            arterial_lag: 0.2,
            systolic: 120.0,
            diastolic: 70.0,
            anatomy_seed: 0,
            peristalsis_rate: 0.5,
            mode_schedule: vec![
                ModeSpan { mode: VentMode::Pc, duration: 60.0 },
                ModeSpan { mode: VentMode::Vc, duration: 20.0 },
            ],
        }
    }

    /// Draws a patient from the default cohort ranges.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let lung_compliance = rng.gen_range(25.0..55.0);
        let driving_pressure = rng.gen_range(8.0..16.0);
        let systolic = rng.gen_range(100.0..150.0);
        PatientParams {
            resistance: rng.gen_range(6.0..16.0),
            lung_compliance,
            chest_wall_compliance: rng.gen_range(100.0..220.0),
            resp_rate: rng.gen_range(12.0..25.0),
            heart_rate: rng.gen_range(60.0..110.0),
            peep: rng.gen_range(5.0..12.0),
            driving_pressure,
            // Volume-controlled breaths target roughly the pressure-controlled volume.
            tidal_volume: (lung_compliance * driving_pressure * rng.gen_range(0.85..1.15)).clamp(200.0, 900.0),
            arterial_lag: rng.gen_range(0.05..0.4),
            systolic,
            diastolic: systolic - rng.gen_range(35.0..60.0),
            anatomy_seed: rng.gen(),
            peristalsis_rate: rng.gen_range(0.2..1.0),
            mode_schedule: vec![
                ModeSpan { mode: VentMode::Pc, duration: rng.gen_range(40.0..80.0) },
                ModeSpan { mode: VentMode::Vc, duration: rng.gen_range(10.0..25.0) },
            ],
        }
    }

    /// Setting changes between recordings of the same patient: driving
    /// pressure, tidal volume, PEEP and rate vary, mechanics and anatomy stay.
    pub fn vary_settings<R: Rng + ?Sized>(&self, rng: &mut R) -> Self {
        let mut p = self.clone();
        p.driving_pressure = (p.driving_pressure * rng.gen_range(0.85..1.15)).max(4.0);
        p.tidal_volume = (p.tidal_volume * rng.gen_range(0.85..1.15)).clamp(150.0, 1000.0);
        p.peep = (p.peep + rng.gen_range(-2.0..2.0)).max(3.0);
        p.resp_rate = (p.resp_rate * rng.gen_range(0.9..1.1)).clamp(8.0, 35.0);
        p.heart_rate = (p.heart_rate * rng.gen_range(0.93..1.07)).clamp(50.0, 140.0);
        let offset = rng.gen_range(0.0..p.mode_schedule.iter().map(|s| s.duration).sum::<f64>());
        p.mode_schedule = rotate_schedule(&p.mode_schedule, offset);
        p
    }

    pub fn validate(&self) -> Result<(), PhantomError> {
        let positive = [
            ("resistance", self.resistance),
            ("lung_compliance", self.lung_compliance),
            ("chest_wall_compliance", self.chest_wall_compliance),
            ("driving_pressure", self.driving_pressure),
            ("tidal_volume", self.tidal_volume),
            ("diastolic", self.diastolic),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(PhantomError::Params(format!("{name} must be positive and finite, got {v}")));
            }
        }
        let ranged = [
            ("resp_rate", self.resp_rate, 8.0, 35.0),
            ("heart_rate", self.heart_rate, 50.0, 140.0),
            ("arterial_lag", self.arterial_lag, 0.0, 0.5),
        ];
        for (name, v, lo, hi) in ranged {
            if !(lo..=hi).contains(&v) {
                return Err(PhantomError::Params(format!("{name} = {v} outside [{lo}, {hi}]")));
            }
        }
        if !(self.peep >= 0.0) {
            return Err(PhantomError::Params(format!("peep must be non-negative, got {}", self.peep)));
        }
        if !(self.peristalsis_rate >= 0.0) {
            return Err(PhantomError::Params(format!("peristalsis_rate must be non-negative, got {}", self.peristalsis_rate)));
        }
        if !(self.systolic > self.diastolic) {
            return Err(PhantomError::Params(format!("systolic {} must exceed diastolic {}", self.systolic, self.diastolic)));
        }
        if self.mode_schedule.is_empty() || self.mode_schedule.iter().any(|s| !(s.duration > 0.0)) {
            return Err(PhantomError::Params("mode_schedule needs at least one span of positive duration".into()));
        }
        Ok(())
    }

    /// Ventilation mode active at time `t` seconds.
    pub fn mode_at(&self, t: f64) -> VentMode {
        let total: f64 = self.mode_schedule.iter().map(|s| s.duration).sum();
        let mut u = t.rem_euclid(total);
        for span in &self.mode_schedule {
            if u < span.duration {
                return span.mode;
            }
            u -= span.duration;
        }
        self.mode_schedule.last().map_or(VentMode::Pc, |s| s.mode)
    }
}

fn rotate_schedule(schedule: &[ModeSpan], offset: f64) -> Vec<ModeSpan> {
    let mut out = Vec::with_capacity(schedule.len() + 1);
    let mut acc = 0.0;
    let mut tail = Vec::new();
    for span in schedule {
        let (start, end) = (acc, acc + span.duration);
        acc = end;
        if end <= offset {
            tail.push(*span);
        } else if start < offset {
            out.push(ModeSpan { mode: span.mode, duration: end - offset });
            tail.push(ModeSpan { mode: span.mode, duration: offset - start });
        } else {
            out.push(*span);
        }
    }
    out.extend(tail);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sampled_patients_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let p = PatientParams::sample(&mut rng);
            p.validate().unwrap();
            p.vary_settings(&mut rng).validate().unwrap();
        }
    }

    #[test]
    fn negative_compliance_is_rejected() {
        let mut p = PatientParams::reference();
        p.lung_compliance = -1.0;
        assert!(matches!(p.validate(), Err(PhantomError::Params(_))));
    }

    #[test]
    fn schedule_rotation_preserves_total_and_mode_sequence() {
        let p = PatientParams::reference();
        let r = rotate_schedule(&p.mode_schedule, 70.0);
        let total: f64 = r.iter().map(|s| s.duration).sum();
        assert!((total - 80.0).abs() < 1e-12);
        let q = PatientParams { mode_schedule: r, ..p.clone() };
        for k in 0..80 {
            assert_eq!(q.mode_at(k as f64 + 0.5), p.mode_at(k as f64 + 70.5));
        }
    }
}
