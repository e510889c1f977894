//! Synthetic replay channel simulation.
//!
//! A genuine recording is a source signal convolved with a short internal
//! channel; a replayed recording additionally passes through a playback
//! device, an acoustic environment and a recording device:
//!
//! ```text
//! genuine = source * internal
//! spoofed = genuine * playback * environment * recorder
//! ```
//!
//! Every stage is followed by peak normalization so that level carries no
//! information about the channel.

mod corpus;
mod ir;
mod source;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

pub use corpus::{
    build_corpus, read_channels, read_manifest, write_manifest, ChannelRecord, CorpusConfig,
    LabeledUtterance, SpoofLabel, Subset, CHANNELS_FILE, MANIFEST_FILE, MANIFEST_HEADER,
    UNSEEN_INSTANCE_BASE,
};
pub use ir::{
    environment_decay_range, make_ir, playback_cutoff_range, recorder_tilt_range, ImpulseResponse,
    IrKind, ENVIRONMENTS, PLAYBACK_DEVICES, RECORDING_DEVICES,
};
pub use source::synth_source;

use crate::dsp::Waveform;
use crate::error::{Error, Result};

pub const PEAK_LEVEL: f64 = 0.9;

/// Kernels at or below this length are convolved directly.
const DIRECT_MAX_TAPS: usize = 32;

/// Full linear convolution, `len(x) + len(h) - 1` samples.
pub fn convolve(x: &Waveform, h: &ImpulseResponse) -> Waveform {
    let samples = convolve_slices(&x.samples, &h.taps);
    Waveform {
        samples,
        sample_rate: x.sample_rate,
    }
}

pub(crate) fn convolve_slices(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return Vec::new();
    }
    if h.len().min(x.len()) <= DIRECT_MAX_TAPS {
        convolve_direct(x, h)
    } else if h.len() <= x.len() {
        overlap_add(x, h)
    } else {
        overlap_add(h, x)
    }
}

fn convolve_direct(x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len() + h.len() - 1];
    for (i, &xv) in x.iter().enumerate() {
        for (o, &hv) in out[i..].iter_mut().zip(h) {
            *o += xv * hv;
        }
    }
    out
}

/// FFT overlap-add; `h` is the shorter operand.
fn overlap_add(x: &[f64], h: &[f64]) -> Vec<f64> {
    let m = h.len();
    let n_fft = (4 * m).next_power_of_two();
    let block = n_fft - m + 1;
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n_fft);
    let inv = planner.plan_fft_inverse(n_fft);

    let mut kernel: Vec<Complex<f64>> = h.iter().map(|&v| Complex::new(v, 0.0)).collect();
    kernel.resize(n_fft, Complex::new(0.0, 0.0));
    fwd.process(&mut kernel);

    let scale = 1.0 / n_fft as f64;
    let mut out = vec![0.0; x.len() + m - 1];
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    for (b, chunk) in x.chunks(block).enumerate() {
        buf.fill(Complex::new(0.0, 0.0));
        for (slot, &v) in buf.iter_mut().zip(chunk) {
            slot.re = v;
        }
        fwd.process(&mut buf);
        for (v, k) in buf.iter_mut().zip(&kernel) {
            *v *= k;
        }
        inv.process(&mut buf);
        let start = b * block;
        let valid = chunk.len() + m - 1;
        for (o, v) in out[start..start + valid].iter_mut().zip(&buf) {
            *o += v.re * scale;
        }
    }
    out
}

fn expect_kind(h: &ImpulseResponse, kind: IrKind) -> Result<()> {
    if h.kind != kind {
        return Err(Error::invalid(format!(
            "expected a {kind:?} impulse response, got {:?}",
            h.kind
        )));
    }
    Ok(())
}

/// Genuine recording: source through the internal channel.
pub fn make_genuine(x: &Waveform, internal: &ImpulseResponse) -> Result<Waveform> {
    expect_kind(internal, IrKind::InternalNoise)?;
    Ok(convolve(x, internal).peak_normalized(PEAK_LEVEL))
}

/// Replayed recording: playback device, then environment, then recorder.
pub fn make_spoofed(
    genuine: &Waveform,
    playback: &ImpulseResponse,
    environment: &ImpulseResponse,
    recorder: &ImpulseResponse,
) -> Result<Waveform> {
    expect_kind(playback, IrKind::Playback)?;
    expect_kind(environment, IrKind::Environment)?;
    expect_kind(recorder, IrKind::Recorder)?;
    let y = convolve(genuine, playback);
    let y = convolve(&y, environment);
    Ok(convolve(&y, recorder).peak_normalized(PEAK_LEVEL))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn wave(samples: Vec<f64>) -> Waveform {
        Waveform::new(samples, 16000).unwrap()
    }

    fn ir(kind: IrKind, taps: Vec<f64>) -> ImpulseResponse {
        ImpulseResponse {
            taps,
            kind,
            class_id: 0,
            instance_seed: 0,
        }
    }

    fn brute(x: &[f64], h: &[f64]) -> Vec<f64> {
        (0..x.len() + h.len() - 1)
            .map(|n| {
                (0..h.len())
                    .filter(|&k| n >= k && n - k < x.len())
                    .map(|k| h[k] * x[n - k])
                    .sum()
            })
            .collect()
    }

    #[test]
    fn hand_example_and_delta() {
        let y = convolve(&wave(vec![1.0, 2.0]), &ir(IrKind::Playback, vec![3.0, 4.0]));
        assert_eq!(y.samples, vec![3.0, 10.0, 8.0]);
        let x = wave(vec![0.5, -0.25, 1.0]);
        assert_eq!(convolve(&x, &ir(IrKind::Playback, vec![1.0])), x);
    }

    #[test]
    fn fft_path_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (n, m) in [(1000, 37), (500, 300), (40, 900), (5000, 1600)] {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let h: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let fast = convolve_slices(&x, &h);
            let slow = brute(&x, &h);
            assert_eq!(fast.len(), n + m - 1);
            let err = fast
                .iter()
                .zip(&slow)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-9, "{n}x{m}: {err}");
        }
    }

    #[test]
    fn genuine_through_delta_is_rescaled_source() {
        let x = wave(vec![0.1, -0.4, 0.2]);
        let y = make_genuine(&x, &ir(IrKind::InternalNoise, vec![1.0])).unwrap();
        for (a, b) in y.samples.iter().zip(&x.samples) {
            assert!((a - 0.9 / 0.4 * b).abs() < 1e-12);
        }
        assert!(make_genuine(&x, &ir(IrKind::Playback, vec![1.0])).is_err());
    }

    #[test]
    fn spoofed_checks_kinds_and_length() {
        let y = wave(vec![0.3; 50]);
        let p = ir(IrKind::Playback, vec![1.0, 0.5]);
        let e = ir(IrKind::Environment, vec![1.0, 0.0, 0.2]);
        let r = ir(IrKind::Recorder, vec![0.7, 0.1, 0.1, 0.1]);
        let out = make_spoofed(&y, &p, &e, &r).unwrap();
        assert_eq!(out.len(), 50 + 2 + 3 + 4 - 3);
        assert!((out.peak() - 0.9).abs() < 1e-12);
        assert!(make_spoofed(&y, &e, &p, &r).is_err());
    }
}
