//! Parametric impulse-response families standing in for real devices and rooms.
//!
//! Each class owns a parameter range that does not overlap with the other
//! classes of its kind; the instance seed draws one device inside that range.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::derive_seed;
use crate::error::{Error, Result};

const SAMPLE_RATE: f64 = 16_000.0;
const FIR_TAPS: usize = 127;
const ENVIRONMENT_TAPS: usize = 1600;
const CUTOFF_FFT: usize = 8192;

pub const ENVIRONMENTS: [&str; 4] = ["Balcony", "Bedroom", "Cantine", "Office"];

pub const PLAYBACK_DEVICES: [&str; 8] = [
    "All-in-one PC speakers",
    "Beyerdynamic DT 770 PRO headphones",
    "Creative A60",
    "Dell laptop with internal speakers",
    "Dynaudio BM5A Speaker connected to laptop",
    "HP Laptop speakers",
    "High Quality GENELEC Studio Monitors Speakers",
    "VIFA M10MD-39-08 Speaker connected to laptop",
];

pub const RECORDING_DEVICES: [&str; 7] = [
    "BQ Aquaris M5 smartphone. Software: Smart voice recorder",
    "Desktop Computer with headset and arecord",
    "H6 Handy Recorder",
    "Nokia Lumia",
    "Rode NT2 microphone connected to laptop",
    "Rode smartlav+ microphone connected to laptop",
    "Samsung Galaxy 7s",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IrKind {
    InternalNoise,
    Playback,
    Environment,
    Recorder,
}

impl IrKind {
    pub fn class_count(self) -> usize {
        match self {
            IrKind::InternalNoise => 1,
            IrKind::Playback => PLAYBACK_DEVICES.len(),
            IrKind::Environment => ENVIRONMENTS.len(),
            IrKind::Recorder => RECORDING_DEVICES.len(),
        }
    }

    fn code(self) -> u64 {
        match self {
            IrKind::InternalNoise => 0,
            IrKind::Playback => 1,
            IrKind::Environment => 2,
            IrKind::Recorder => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponse {
    pub taps: Vec<f64>,
    pub kind: IrKind,
    pub class_id: usize,
    pub instance_seed: u64,
}

impl ImpulseResponse {
    pub fn energy(&self) -> f64 {
        self.taps.iter().map(|t| t * t).sum()
    }
}

/// Range of the -3 dB low-pass corner (Hz) for a playback class.
pub fn playback_cutoff_range(class_id: usize) -> (f64, f64) {
    let lo = 2400.0 + 650.0 * class_id as f64;
    (lo, lo + 300.0)
}

fn playback_resonance(class_id: usize) -> ((f64, f64), (f64, f64)) {
    // (centre as a fraction of the cutoff, peak gain)
    let frac = 0.22 + 0.06 * (class_id % 4) as f64;
    let gain = 0.25 + 0.2 * (class_id % 3) as f64;
    ((frac, frac + 0.04), (gain, gain + 0.1))
}

/// Range of the reverberation time T60 (seconds) for an environment class.
pub fn environment_decay_range(class_id: usize) -> (f64, f64) {
    [(0.05, 0.08), (0.15, 0.20), (0.45, 0.60), (0.28, 0.35)][class_id]
}

/// Direct-to-reverberant energy ratio range (dB).
fn environment_drr_range(class_id: usize) -> (f64, f64) {
    [(8.0, 12.0), (2.0, 5.0), (-5.0, -2.0), (-1.0, 2.0)][class_id]
}

/// Early-reflection delay ranges (ms) and gains.
fn environment_reflections(class_id: usize) -> &'static [((f64, f64), f64)] {
    match class_id {
        0 => &[((2.0, 3.0), 0.5)],
        1 => &[((3.5, 4.5), 0.6), ((6.0, 7.0), 0.4)],
        2 => &[((8.0, 10.0), 0.5), ((13.0, 16.0), 0.45), ((21.0, 25.0), 0.4)],
        _ => &[((5.0, 6.0), 0.55), ((9.0, 11.0), 0.4)],
    }
}

/// Range of the first-order tilt coefficient `a` in `1 - a z^-1`.
pub fn recorder_tilt_range(class_id: usize) -> (f64, f64) {
    let centre = -0.6 + 0.2 * class_id as f64;
    (centre - 0.05, centre + 0.05)
}

fn recorder_highpass_range(class_id: usize) -> (f64, f64) {
    let centre = 60.0 + 45.0 * class_id as f64;
    (centre - 10.0, centre + 10.0)
}

/// Deterministic impulse response for one device or room instance.
pub fn make_ir(kind: IrKind, class_id: usize, instance_seed: u64) -> Result<ImpulseResponse> {
    if class_id >= kind.class_count() {
        return Err(Error::invalid(format!(
            "class {class_id} out of range for {kind:?} ({} classes)",
            kind.class_count()
        )));
    }
    let seed = derive_seed(derive_seed(kind.code(), class_id as u64), instance_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let taps = match kind {
        IrKind::InternalNoise => internal_taps(&mut rng),
        IrKind::Playback => playback_taps(class_id, &mut rng),
        IrKind::Environment => environment_taps(class_id, &mut rng),
        IrKind::Recorder => recorder_taps(class_id, &mut rng),
    };
    debug_assert!(taps.iter().all(|t| t.is_finite()));
    Ok(ImpulseResponse {
        taps,
        kind,
        class_id,
        instance_seed,
    })
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

fn internal_taps(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut taps = vec![1.0, uniform(rng, (-0.15, 0.15))];
    for k in 2..8 {
        taps.push(uniform(rng, (-0.03, 0.03)) * 0.7f64.powi(k));
    }
    taps
}

fn blackman(n: usize, len: usize) -> f64 {
    let x = 2.0 * PI * n as f64 / (len - 1) as f64;
    0.42 - 0.5 * x.cos() + 0.08 * (2.0 * x).cos()
}

/// Linear-phase windowed-sinc low-pass with unit DC gain.
fn lowpass(cutoff_hz: f64, len: usize) -> Vec<f64> {
    let fc = cutoff_hz / SAMPLE_RATE;
    let mid = (len - 1) as f64 / 2.0;
    let mut taps: Vec<f64> = (0..len)
        .map(|n| {
            let t = n as f64 - mid;
            let sinc = if t == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * t).sin() / (PI * t)
            };
            sinc * blackman(n, len)
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

fn magnitude_response(taps: &[f64], n_fft: usize) -> Vec<f64> {
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut buf: Vec<Complex<f64>> = taps.iter().map(|&t| Complex::new(t, 0.0)).collect();
    buf.resize(n_fft, Complex::new(0.0, 0.0));
    fft.process(&mut buf);
    buf[..n_fft / 2 + 1].iter().map(|c| c.norm()).collect()
}

/// First frequency above DC where the response falls below DC / sqrt(2).
fn minus_3db_hz(taps: &[f64]) -> f64 {
    let mag = magnitude_response(taps, CUTOFF_FFT);
    let limit = mag[0] / 2f64.sqrt();
    let bin_hz = SAMPLE_RATE / CUTOFF_FFT as f64;
    match mag.iter().position(|&m| m < limit) {
        // Interpolate between the last bin above and the first below.
        Some(k) if k > 0 => {
            let (a, b) = (mag[k - 1], mag[k]);
            ((k - 1) as f64 + (a - limit) / (a - b)) * bin_hz
        }
        _ => SAMPLE_RATE / 2.0,
    }
}

fn playback_design(design_hz: f64, res_hz: f64, res_gain: f64) -> Vec<f64> {
    let lp = lowpass(design_hz, FIR_TAPS);
    let hi = lowpass(res_hz + 150.0, FIR_TAPS);
    let lo = lowpass(res_hz - 150.0, FIR_TAPS);
    lp.iter()
        .zip(hi.iter().zip(&lo))
        .map(|(l, (h, b))| l + res_gain * (h - b))
        .collect()
}

fn playback_taps(class_id: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let target = uniform(rng, playback_cutoff_range(class_id));
    let (frac, gain) = playback_resonance(class_id);
    let res_hz = target * uniform(rng, frac);
    let res_gain = uniform(rng, gain);
    // The windowed-sinc corner sits at -6 dB; solve for the design corner
    // whose -3 dB point lands on the target.
    let (mut lo, mut hi) = (target, (target + 1200.0).min(7950.0));
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if minus_3db_hz(&playback_design(mid, res_hz, res_gain)) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    playback_design(0.5 * (lo + hi), res_hz, res_gain)
}

fn environment_taps(class_id: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let t60 = uniform(rng, environment_decay_range(class_id));
    let drr_db = uniform(rng, environment_drr_range(class_id));
    let mut taps = vec![0.0; ENVIRONMENT_TAPS];
    taps[0] = 1.0;
    let reflections = environment_reflections(class_id);
    let first = reflections
        .iter()
        .map(|((lo, _), _)| (lo * 1e-3 * SAMPLE_RATE) as usize)
        .min()
        .unwrap_or(1)
        .max(1);
    let decay = -6.907_755_278_982_137 / (t60 * SAMPLE_RATE);
    let mut tail: Vec<f64> = (0..ENVIRONMENT_TAPS)
        .map(|n| {
            if n < first {
                0.0
            } else {
                rng.sample::<f64, _>(StandardNormal) * (decay * (n - first) as f64).exp()
            }
        })
        .collect();
    let tail_energy: f64 = tail.iter().map(|t| t * t).sum();
    let wanted = 10f64.powf(-drr_db / 10.0);
    let gain = (wanted / tail_energy).sqrt();
    tail.iter_mut().for_each(|t| *t *= gain);
    for &(delay, g) in reflections {
        let at = (uniform(rng, delay) * 1e-3 * SAMPLE_RATE).round() as usize;
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        taps[at] += sign * g * uniform(rng, (0.85, 1.15));
    }
    for (t, r) in taps.iter_mut().zip(&tail) {
        *t += r;
    }
    taps
}

fn recorder_taps(class_id: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let tilt = uniform(rng, recorder_tilt_range(class_id));
    let corner = uniform(rng, recorder_highpass_range(class_id));
    let lp = lowpass(corner, FIR_TAPS);
    let mid = FIR_TAPS / 2;
    let hp: Vec<f64> = lp
        .iter()
        .enumerate()
        .map(|(n, &l)| if n == mid { 1.0 - l } else { -l })
        .collect();
    super::convolve_slices(&hp, &[1.0, -tilt])
}
