use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dsp::{Waveform, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};

const F0_MIN: f64 = 80.0;
const F0_MAX: f64 = 300.0;
const HARMONIC_CEILING_HZ: f64 = 7800.0;

/// Speech-like test signal: a harmonic series on a drifting fundamental,
/// shaped by three formants, amplitude-modulated at a syllabic rate, plus a
/// low broadband noise floor. Peak amplitude is 0.9.
pub fn synth_source(seed: u64, duration_s: f64) -> Result<Waveform> {
    if !(1.0..=10.0).contains(&duration_s) {
        return Err(Error::invalid(format!(
            "source duration {duration_s} s outside [1, 10]"
        )));
    }
    let sr = f64::from(DEFAULT_SAMPLE_RATE);
    let n = (duration_s * sr).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let base_f0 = rng.gen_range(100.0..220.0);
    let drift_hz = rng.gen_range(0.2..0.8);
    let drift_depth = rng.gen_range(0.05..0.2);
    let vibrato_hz = rng.gen_range(4.0..7.0);
    let drift_phase = rng.gen_range(0.0..2.0 * PI);
    let formants = [
        (rng.gen_range(350.0..900.0), 120.0),
        (rng.gen_range(1000.0..2400.0), 200.0),
        (rng.gen_range(2500.0..3500.0), 300.0),
    ];
    let am_hz = rng.gen_range(2.0..8.0);
    let am_phase = rng.gen_range(0.0..2.0 * PI);
    let snr_db = rng.gen_range(25.0..35.0);

    let max_harmonics = (HARMONIC_CEILING_HZ / F0_MIN) as usize;
    let mut amps = vec![0.0; max_harmonics + 1];
    let mut phase = 0.0f64;
    let mut voiced = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / sr;
        let f0 = (base_f0
            * (1.0
                + drift_depth * (2.0 * PI * drift_hz * t + drift_phase).sin()
                + 0.01 * (2.0 * PI * vibrato_hz * t).sin()))
        .clamp(F0_MIN, F0_MAX);
        // Formant weights move slowly; refresh every 2 ms.
        if i % 32 == 0 {
            for (k, a) in amps.iter_mut().enumerate().skip(1) {
                let fk = k as f64 * f0;
                *a = if fk > HARMONIC_CEILING_HZ {
                    0.0
                } else {
                    let envelope: f64 = formants
                        .iter()
                        .map(|&(fc, bw)| (-((fk - fc) / bw).powi(2)).exp())
                        .sum();
                    (0.15 + envelope) / (k as f64).powf(0.8)
                };
            }
        }
        phase = (phase + 2.0 * PI * f0 / sr) % (2.0 * PI);
        // sin(k phase) by the Chebyshev recurrence.
        let two_cos = 2.0 * phase.cos();
        let (mut prev, mut cur) = (0.0, phase.sin());
        let mut s = 0.0;
        for &a in &amps[1..] {
            if a == 0.0 {
                break;
            }
            s += a * cur;
            let next = two_cos * cur - prev;
            prev = cur;
            cur = next;
        }
        let am = 0.1 + 0.9 * (0.5 * (1.0 + (2.0 * PI * am_hz * t + am_phase).sin())).powf(1.5);
        voiced.push(s * am);
    }

    let power = voiced.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let noise_std = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    let samples: Vec<f64> = voiced
        .into_iter()
        .map(|v| v + noise_std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(Waveform::new(samples, DEFAULT_SAMPLE_RATE)?.peak_normalized(super::PEAK_LEVEL))
}
