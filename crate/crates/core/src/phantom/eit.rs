use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub const FRAME_SIDE: usize = 32;
pub const FRAME_LEN: usize = FRAME_SIDE * FRAME_SIDE;

/// Stack of `[T, 32, 32]` row-major frames.
#[derive(Clone, Debug, PartialEq)]
pub struct EitFrames {
    frames: usize,
    data: Vec<f32>,
}

impl EitFrames {
    pub fn new(frames: usize, data: Vec<f32>) -> Option<Self> {
        (data.len() == frames * FRAME_LEN).then_some(EitFrames { frames, data })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * FRAME_LEN..(t + 1) * FRAME_LEN]
    }

    /// Frames `start..start + len` as a flat buffer.
    pub fn window(&self, start: usize, len: usize) -> &[f32] {
        &self.data[start * FRAME_LEN..(start + len) * FRAME_LEN]
    }

    /// Sum over all pixels of every frame (the global impedance curve).
    pub fn sums(&self) -> Vec<f64> {
        self.data.chunks_exact(FRAME_LEN).map(|f| f.iter().map(|&v| v as f64).sum()).collect()
    }

    /// Frames re-indexed as `out[j] = self[j + offset]` for `j < len`.
    pub fn slice(&self, offset: usize, len: usize) -> EitFrames {
        EitFrames { frames: len, data: self.window(offset, len).to_vec() }
    }
}

/// Rendering gains. Gains and noise are absolute, so the ratio between the
/// ventilation, cardiac and noise components survives per-sequence
/// standardization and carries the tidal amplitude.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EitOptions {
    /// Per-pixel lung gain at `reference_volume`.
    pub lung_gain: f64,
    pub cardiac_gain: f64,
    pub noise_sd: f64,
    /// Volume (ml) producing a unit lung signal.
    pub reference_volume: f64,
    /// Cardiac delay at the far edge of the image, seconds.
    pub max_cardiac_delay: f64,
}

impl Default for EitOptions {
    fn default() -> Self {
        EitOptions { lung_gain: 1.0, cardiac_gain: 0.1, noise_sd: 0.05, reference_volume: 500.0, max_cardiac_delay: 0.08 }
    }
}

/// Per-pixel gain maps of one thorax.
#[derive(Clone, Debug, PartialEq)]
pub struct Anatomy {
    /// Ventilation gain, zero outside the lungs.
    pub lung: Vec<f64>,
    /// Cardiac mask, zero outside the heart.
    pub heart: Vec<f64>,
    pub heart_center: (f64, f64),
}

struct Ellipse {
    cx: f64,
    cy: f64,
    ax: f64,
    ay: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        ((x - self.cx) / self.ax).powi(2) + ((y - self.cy) / self.ay).powi(2) <= 1.0
    }
}

impl Anatomy {
    /// Two lung ellipses and a heart ellipse with a seeded rotation,
    /// translation and size jitter.
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA7A7_0000_0000_0001);
        let angle: f64 = rng.gen_range(-0.15..0.15);
        let (tx, ty): (f64, f64) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        let scale: f64 = rng.gen_range(0.85..1.15);
        let lungs = [
            Ellipse { cx: 9.5, cy: 15.0, ax: 5.5, ay: 9.5 },
            Ellipse { cx: 22.0, cy: 15.5, ax: 5.0, ay: 9.0 },
        ];
        let heart = Ellipse { cx: 17.5, cy: 21.0, ax: 4.5, ay: 3.5 };
        let c = (FRAME_SIDE as f64 - 1.0) / 2.0;
        let (sin, cos) = angle.sin_cos();
        // Pixel position back to the canonical (unjittered) frame.
        let canonical = |x: f64, y: f64| {
            let (dx, dy) = (x - c - tx, y - c - ty);
            ((cos * dx + sin * dy) / scale + c, (-sin * dx + cos * dy) / scale + c)
        };
        let mut lung = vec![0.0; FRAME_LEN];
        let mut heart_mask = vec![0.0; FRAME_LEN];
        for py in 0..FRAME_SIDE {
            for px in 0..FRAME_SIDE {
                let (x, y) = canonical(px as f64, py as f64);
                let i = py * FRAME_SIDE + px;
                if heart.contains(x, y) {
                    heart_mask[i] = 1.0;
                } else if lungs.iter().any(|e| e.contains(x, y)) {
                    // Ventral regions ventilate more than dorsal ones.
                    lung[i] = 0.7 + 0.6 * (1.0 - y / (FRAME_SIDE as f64 - 1.0));
                }
            }
        }
        let (hx, hy) = (heart.cx - c, heart.cy - c);
        let heart_center = (scale * (cos * hx - sin * hy) + c + tx, scale * (sin * hx + cos * hy) + c + ty);
        Anatomy { lung, heart: heart_mask, heart_center }
    }

    /// Gain-weighted centroid `(x, y)` of the lung map.
    pub fn lung_centroid(&self) -> (f64, f64) {
        let (mut sx, mut sy, mut w) = (0.0, 0.0, 0.0);
        for (i, &g) in self.lung.iter().enumerate() {
            sx += g * (i % FRAME_SIDE) as f64;
            sy += g * (i / FRAME_SIDE) as f64;
            w += g;
        }
        (sx / w, sy / w)
    }
}

/// Renders frames at `rate` Hz: lung gain times normalized volume, cardiac
/// mask times the regionally delayed cardiac activity, plus Gaussian noise.
pub fn render_eit<R: Rng + ?Sized>(
    volume: &[f64],
    cardiac: &dyn Fn(f64) -> f64,
    rate: f64,
    anatomy: &Anatomy,
    opts: &EitOptions,
    rng: &mut R,
) -> EitFrames {
    let heart_px: Vec<(usize, f64)> = anatomy
        .heart
        .iter()
        .enumerate()
        .filter(|(_, &g)| g != 0.0)
        .map(|(i, &g)| {
            let (x, y) = ((i % FRAME_SIDE) as f64, (i / FRAME_SIDE) as f64);
            let dist = ((x - anatomy.heart_center.0).powi(2) + (y - anatomy.heart_center.1).powi(2)).sqrt();
            (i, g * dist / FRAME_SIDE as f64 * opts.max_cardiac_delay)
        })
        .collect();
    let mut data = vec![0.0f32; volume.len() * FRAME_LEN];
    for (t, (&v, frame)) in volume.iter().zip(data.chunks_exact_mut(FRAME_LEN)).enumerate() {
        let vent = opts.lung_gain * v / opts.reference_volume;
        for (px, &g) in frame.iter_mut().zip(&anatomy.lung) {
            *px = (g * vent) as f32;
        }
        if opts.cardiac_gain != 0.0 {
            let time = t as f64 / rate;
            for &(i, delay) in &heart_px {
                frame[i] += (opts.cardiac_gain * anatomy.heart[i] * cardiac(time - delay)) as f32;
            }
        }
        if opts.noise_sd != 0.0 {
            for px in frame.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *px += (opts.noise_sd * z) as f32;
            }
        }
    }
    EitFrames { frames: volume.len(), data }
}
