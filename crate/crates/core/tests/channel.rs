mod common;

use std::collections::HashSet;
use std::f64::consts::PI;

use common::oracles::direct_convolution;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use replaynet_core::channel::*;
use replaynet_core::dsp::Waveform;

fn wave(samples: Vec<f64>) -> Waveform {
    Waveform::new(samples, 16_000).unwrap()
}

fn random_wave(len: usize, rng: &mut ChaCha8Rng) -> Waveform {
    wave((0..len).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn ir(taps: Vec<f64>, kind: IrKind) -> ImpulseResponse {
    ImpulseResponse {
        taps,
        kind,
        class_id: 0,
        instance_seed: 0,
    }
}

fn small_corpus() -> CorpusConfig {
    CorpusConfig {
        n_train_genuine: 50,
        n_train_spoofed: 50,
        n_dev_genuine: 20,
        n_dev_spoofed: 20,
        n_eval_genuine: 30,
        n_eval_spoofed: 30,
        min_duration_s: 1.0,
        max_duration_s: 1.2,
        ..CorpusConfig::default()
    }
}

/// Magnitude response at `f` Hz by direct evaluation of the DTFT sum.
fn response_at(taps: &[f64], f: f64) -> f64 {
    let w = 2.0 * PI * f / 16_000.0;
    let (re, im) = taps.iter().enumerate().fold((0.0, 0.0), |(re, im), (n, &h)| {
        (re + h * (w * n as f64).cos(), im - h * (w * n as f64).sin())
    });
    re.hypot(im)
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

#[test]
fn convolution_matches_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random_wave(1000, &mut rng);
    let h = ir((0..37).map(|_| rng.gen_range(-1.0..1.0)).collect(), IrKind::Playback);
    let fast = convolve(&x, &h);
    let slow = direct_convolution(&x.samples, &h.taps);
    assert_eq!(fast.len(), slow.len());
    assert!(fast.samples.iter().zip(&slow).all(|(a, b)| (a - b).abs() < 1e-9));
    // Long kernels take the FFT path.
    let room = make_ir(IrKind::Environment, 2, 5).unwrap();
    let slow = direct_convolution(&x.samples, &room.taps);
    let fast = convolve(&x, &room);
    assert!(fast.samples.iter().zip(&slow).all(|(a, b)| (a - b).abs() < 1e-9));
}

#[test]
fn convolution_hand_cases() {
    let y = convolve(&wave(vec![1.0, 2.0]), &ir(vec![3.0, 4.0], IrKind::Playback));
    assert_eq!(y.samples, vec![3.0, 10.0, 8.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random_wave(300, &mut rng);
    let y = convolve(&x, &ir(vec![1.0], IrKind::Playback));
    assert!(x.samples.iter().zip(&y.samples).all(|(a, b)| (a - b).abs() < 1e-12));
}

#[test]
fn genuine_channel_contract() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = random_wave(2000, &mut rng);
    let delta = ir(vec![1.0], IrKind::InternalNoise);
    let y = make_genuine(&x, &delta).unwrap();
    let scale = 0.9 / x.peak();
    assert!(x.samples.iter().zip(&y.samples).all(|(a, b)| (a * scale - b).abs() < 1e-12));
    for seed in 0..10 {
        let x = random_wave(500 + seed as usize * 37, &mut rng);
        let n = make_ir(IrKind::InternalNoise, 0, seed).unwrap();
        let y = make_genuine(&x, &n).unwrap();
        assert!((y.peak() - 0.9).abs() < 1e-6);
        assert_eq!(y.len(), x.len() + n.taps.len() - 1);
    }
    let wrong = make_ir(IrKind::Playback, 0, 1).unwrap();
    assert!(make_genuine(&x, &wrong).is_err());
}

#[test]
fn spoofed_channel_contract() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let g = random_wave(3000, &mut rng);
    let d = |k| ir(vec![1.0], k);
    let y = make_spoofed(&g, &d(IrKind::Playback), &d(IrKind::Environment), &d(IrKind::Recorder)).unwrap();
    let ratio = y.samples[10] / g.samples[10];
    assert!(g.samples.iter().zip(&y.samples).all(|(a, b)| (a * ratio - b).abs() < 1e-12));

    let p = make_ir(IrKind::Playback, 3, 1).unwrap();
    let e = make_ir(IrKind::Environment, 1, 2).unwrap();
    let r = make_ir(IrKind::Recorder, 5, 3).unwrap();
    let y = make_spoofed(&g, &p, &e, &r).unwrap();
    assert_eq!(y.len(), g.len() + p.taps.len() + e.taps.len() + r.taps.len() - 3);
    assert!((y.peak() - 0.9).abs() < 1e-9);

    // Convolution commutes: any cascade order gives the same signal.
    let cascade = |a: &ImpulseResponse, b: &ImpulseResponse, c: &ImpulseResponse| {
        convolve(&convolve(&convolve(&g, a), b), c).peak_normalized(0.9)
    };
    let reference = cascade(&p, &e, &r);
    let norm = rms(&reference.samples);
    for other in [cascade(&r, &p, &e), cascade(&e, &r, &p), cascade(&r, &e, &p)] {
        let diff: Vec<f64> = other.samples.iter().zip(&reference.samples).map(|(a, b)| a - b).collect();
        assert!(rms(&diff) / norm < 1e-6);
    }
    assert!(make_spoofed(&g, &e, &p, &r).is_err());
}

#[test]
fn spoofing_changes_the_signal() {
    for seed in 0..8 {
        let src = synth_source(seed, 1.0).unwrap();
        let g = make_genuine(&src, &make_ir(IrKind::InternalNoise, 0, seed).unwrap()).unwrap();
        let p = make_ir(IrKind::Playback, (seed % 8) as usize, seed).unwrap();
        let e = make_ir(IrKind::Environment, (seed % 4) as usize, seed).unwrap();
        let r = make_ir(IrKind::Recorder, (seed % 7) as usize, seed).unwrap();
        let y = make_spoofed(&g, &p, &e, &r).unwrap();
        let trimmed = wave(y.samples[..g.len()].to_vec()).peak_normalized(0.9);
        let diff: f64 = trimmed.samples.iter().zip(&g.samples).map(|(a, b)| (a - b).powi(2)).sum();
        let base: f64 = g.samples.iter().map(|v| v * v).sum();
        assert!((diff / base).sqrt() > 0.01, "seed {seed}");
    }
}

#[test]
fn source_spectral_centroid_is_below_4khz() {
    use rustfft::num_complex::Complex;
    use rustfft::FftPlanner;
    let n = 16_384;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    for seed in 0..100 {
        let s = synth_source(seed, 1.5).unwrap();
        assert!(s.peak() <= 0.9 + 1e-12);
        let mut buf: Vec<Complex<f64>> = s.samples[..n].iter().map(|&v| Complex::new(v, 0.0)).collect();
        fft.process(&mut buf);
        let (num, den) = buf[..n / 2].iter().enumerate().fold((0.0, 0.0), |(num, den), (k, c)| {
            let p = c.norm_sqr();
            (num + p * k as f64 * 16_000.0 / n as f64, den + p)
        });
        assert!(num / den < 4000.0, "seed {seed}: centroid {}", num / den);
    }
}

#[test]
fn internal_channel_is_near_delta() {
    for seed in 0..50 {
        let n = make_ir(IrKind::InternalNoise, 0, seed).unwrap();
        assert!(n.taps.len() <= 16);
        assert!(n.taps[0].powi(2) >= 0.9 * n.energy());
    }
}

#[test]
fn playback_cutoff_stays_in_class_range() {
    let (lo, hi) = playback_cutoff_range(3);
    let a = make_ir(IrKind::Playback, 3, 100).unwrap();
    let b = make_ir(IrKind::Playback, 3, 101).unwrap();
    assert_ne!(a.taps, b.taps);
    for h in [&a, &b] {
        assert!(h.taps.len() <= 128);
        // -3 dB relative to the passband level at 100 Hz, scanning upward
        // past the resonance.
        let reference = response_at(&h.taps, 100.0);
        let threshold = reference * 10f64.powf(-3.0 / 20.0);
        let cutoff = (0..8000)
            .map(|f| f as f64)
            .filter(|&f| f > lo * 0.8)
            .find(|&f| response_at(&h.taps, f) < threshold)
            .unwrap();
        assert!(cutoff >= lo - 25.0 && cutoff <= hi + 25.0, "cutoff {cutoff} outside [{lo}, {hi}]");
    }
}

#[test]
fn environment_tail_decays() {
    for class in 0..4 {
        for seed in 0..5 {
            let e = make_ir(IrKind::Environment, class, seed).unwrap();
            assert!(e.taps.len() <= 1600);
            let (first, second) = e.taps.split_at(e.taps.len() / 2);
            assert!(rms(second) < rms(first), "class {class} seed {seed}");
        }
    }
}

#[test]
fn every_table_class_is_producible() {
    for (kind, count) in [
        (IrKind::Playback, 8),
        (IrKind::Environment, 4),
        (IrKind::Recorder, 7),
        (IrKind::InternalNoise, 1),
    ] {
        assert_eq!(kind.class_count(), count);
        for c in 0..count {
            let h = make_ir(kind, c, 9).unwrap();
            assert!(h.taps.iter().all(|t| t.is_finite()) && h.taps.iter().any(|&t| t != 0.0));
            assert_eq!(h, make_ir(kind, c, 9).unwrap());
        }
        assert!(make_ir(kind, count, 9).is_err());
    }
}

#[test]
fn corpus_bookkeeping_and_determinism() {
    let cfg = small_corpus();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let rows = build_corpus(&cfg, 7, a.path()).unwrap();
    assert_eq!(rows.len(), 200);
    assert_eq!(rows.iter().filter(|u| u.spoof == SpoofLabel::Genuine).count(), 100);
    for u in &rows {
        u.validate().unwrap();
        assert!(a.path().join(&u.path).exists());
    }
    assert_eq!(read_manifest(a.path().join(MANIFEST_FILE)).unwrap(), rows);
    let text = std::fs::read_to_string(a.path().join(MANIFEST_FILE)).unwrap();
    assert!(text.starts_with("id,path,subset,spoof,env_label,playback_label,recorder_label\n"));
    assert!(!text.contains('\r'));

    build_corpus(&cfg, 7, b.path()).unwrap();
    for file in [MANIFEST_FILE, CHANNELS_FILE, "wav/eval_00059.wav"] {
        assert_eq!(
            std::fs::read(a.path().join(file)).unwrap(),
            std::fs::read(b.path().join(file)).unwrap(),
            "{file} differs between identical builds"
        );
    }

    // Eval device instances never occur in train or dev.
    let subset: std::collections::HashMap<_, _> = rows.iter().map(|u| (u.id.clone(), u.subset)).collect();
    let channels = read_channels(a.path().join(CHANNELS_FILE)).unwrap();
    let seeds = |pick: &dyn Fn(Subset) -> bool| -> HashSet<u64> {
        channels
            .iter()
            .filter(|c| pick(subset[&c.id]))
            .filter_map(|c| c.replay_seeds)
            .flatten()
            .collect()
    };
    let eval = seeds(&|s| s == Subset::Eval);
    let seen = seeds(&|s| s != Subset::Eval);
    assert!(!eval.is_empty() && !seen.is_empty());
    assert!(eval.is_disjoint(&seen));
}

#[test]
fn corpus_rejects_zero_counts() {
    let cfg = CorpusConfig {
        n_dev_spoofed: 0,
        ..small_corpus()
    };
    assert!(build_corpus(&cfg, 1, tempfile::tempdir().unwrap().path()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn convolve_is_linear(
        x in prop::collection::vec(-1.0f64..1.0, 1..300),
        h in prop::collection::vec(-1.0f64..1.0, 1..60),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: Vec<f64> = (0..x.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h = ir(h, IrKind::Playback);
        let mix = wave(x.iter().zip(&z).map(|(p, q)| a * p + b * q).collect());
        let lhs = convolve(&mix, &h);
        let cx = convolve(&wave(x.clone()), &h);
        let cz = convolve(&wave(z), &h);
        for i in 0..lhs.len() {
            prop_assert!((lhs.samples[i] - (a * cx.samples[i] + b * cz.samples[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn convolve_matches_oracle(
        x in prop::collection::vec(-1.0f64..1.0, 1..400),
        h in prop::collection::vec(-1.0f64..1.0, 1..200),
    ) {
        let fast = convolve(&wave(x.clone()), &ir(h.clone(), IrKind::Playback));
        let slow = direct_convolution(&x, &h);
        prop_assert_eq!(fast.len(), slow.len());
        for (f, s) in fast.samples.iter().zip(&slow) {
            prop_assert!((f - s).abs() < 1e-9);
        }
    }
}
