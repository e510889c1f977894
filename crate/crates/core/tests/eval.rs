mod common;

use common::oracles::brute_force_eer;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use replaynet_core::backend::Code;
use replaynet_core::channel::SpoofLabel;
use replaynet_core::eval::*;

fn trials(genuine: &[f64], spoofed: &[f64]) -> TrialSet {
    let scores: Vec<f64> = genuine.iter().chain(spoofed).copied().collect();
    let labels: Vec<SpoofLabel> = std::iter::repeat(SpoofLabel::Genuine)
        .take(genuine.len())
        .chain(std::iter::repeat(SpoofLabel::Spoofed).take(spoofed.len()))
        .collect();
    TrialSet::from_scores(&scores, &labels)
}

fn random_scores(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let coarse = rng.gen_bool(0.3);
    let shift = rng.gen_range(0.0..2.0);
    let ng = rng.gen_range(1..40);
    let ns = rng.gen_range(1..40);
    let mut draw = |n: usize, shift: f64| -> Vec<f64> {
        (0..n)
            .map(|_| {
                let v = rng.gen_range(-3.0..3.0) + shift;
                if coarse {
                    v.round()
                } else {
                    v
                }
            })
            .collect()
    };
    (draw(ng, shift), draw(ns, 0.0))
}

#[test]
fn hand_cases() {
    assert_eq!(compute_eer(&trials(&[2.0, 3.0], &[0.0, 1.0])).unwrap(), 0.0);
    assert_eq!(compute_eer(&trials(&[0.0, 1.0], &[2.0, 3.0])).unwrap(), 100.0);
    assert_eq!(compute_eer(&trials(&[1.0; 3], &[1.0; 5])).unwrap(), 50.0);
    let eer = compute_eer(&trials(&[1.0, 3.0], &[0.0, 2.0])).unwrap();
    assert!((eer - 50.0).abs() < 1e-12);
}

#[test]
fn matches_brute_force_on_random_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..200 {
        let (g, s) = random_scores(&mut rng);
        let fast = compute_eer(&trials(&g, &s)).unwrap();
        let slow = brute_force_eer(&g, &s);
        assert!((fast - slow).abs() < 1e-9, "case {case}: {fast} vs {slow}");
    }
}

#[test]
fn identical_distributions_give_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g: Vec<f64> = (0..5000).map(|_| rng.gen()).collect();
    let s: Vec<f64> = (0..5000).map(|_| rng.gen()).collect();
    let eer = compute_eer(&trials(&g, &s)).unwrap();
    assert!((eer - 50.0).abs() < 2.0, "eer {eer}");
}

#[test]
fn degenerate_sets_are_rejected() {
    assert!(compute_eer(&trials(&[1.0], &[])).is_err());
    assert!(compute_eer(&trials(&[], &[1.0])).is_err());
    assert!(compute_eer(&trials(&[f64::NAN], &[1.0])).is_err());
}

#[test]
fn det_curve_is_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g: Vec<f64> = (0..500).map(|_| rng.gen_range(0.0..2.0)).collect();
    let s: Vec<f64> = (0..500).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let points = det_points(&trials(&g, &s)).unwrap();
    assert_eq!((points[0].far, points[0].frr), (1.0, 0.0));
    assert_eq!(points.last().unwrap().far, 0.0);
    for w in points.windows(2) {
        assert!(w[1].threshold > w[0].threshold);
        assert!(w[1].far <= w[0].far && w[1].frr >= w[0].frr);
    }
    let csv = format_det_csv(&points);
    assert!(csv.starts_with("threshold,far,frr\n"));
    assert_eq!(csv.lines().count(), points.len() + 1);
    let line = report_line(&trials(&g, &s)).unwrap();
    assert!(line.starts_with("eer_pct=") && line.ends_with("n_genuine=500 n_spoofed=500"));
}

#[test]
fn better_separation_lowers_eer() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let g: Vec<f64> = (0..500).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let s: Vec<f64> = (0..500).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut last = f64::INFINITY;
    for shift in [0.0, 0.25, 0.5, 1.0, 1.5, 2.5] {
        let moved: Vec<f64> = g.iter().map(|v| v + shift).collect();
        let eer = compute_eer(&trials(&moved, &s)).unwrap();
        assert!(eer <= last);
        last = eer;
    }
    assert_eq!(last, 0.0);
}

#[test]
fn code_export_has_one_column_per_dimension() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("codes.csv");
    let rows = vec![
        ("u1".to_string(), SpoofLabel::Genuine, Code((0..128).map(|v| v as f64 * 0.5).collect())),
        ("u2".to_string(), SpoofLabel::Spoofed, Code(vec![-1.5e-7; 128])),
    ];
    export_codes(&rows, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    assert_eq!(header.len(), 130);
    assert_eq!(&header[..3], &["id", "label_spoof", "c0"]);
    assert_eq!(header[129], "c127");
    assert!(text.lines().skip(1).all(|l| l.split(',').count() == 130));
    let back = read_codes(&path).unwrap();
    assert_eq!(back.len(), 2);
    assert_eq!(back[1].1, SpoofLabel::Spoofed);
    for ((_, _, a), (_, _, b)) in rows.iter().zip(&back) {
        assert!(a.0.iter().zip(&b.0).all(|(x, y)| (x - y).abs() <= 1e-8 * x.abs().max(1e-8)));
    }
    let ragged = vec![rows[0].clone(), ("u3".to_string(), SpoofLabel::Genuine, Code(vec![0.0; 3]))];
    assert!(export_codes(&ragged, dir.path().join("bad.csv")).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn eer_depends_only_on_ranks(seed in any::<u64>(), scale in 0.1f64..10.0, offset in -5.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (g, s) = random_scores(&mut rng);
        let f = |v: &f64| (scale * v + offset).exp();
        let a = compute_eer(&trials(&g, &s)).unwrap();
        let b = compute_eer(&trials(&g.iter().map(f).collect::<Vec<_>>(), &s.iter().map(f).collect::<Vec<_>>())).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn negating_and_swapping_labels_preserves_eer(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g: Vec<f64> = (0..rng.gen_range(1..30)).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let s: Vec<f64> = (0..rng.gen_range(1..30)).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let neg = |v: &Vec<f64>| v.iter().map(|x| -x).collect::<Vec<_>>();
        let a = compute_eer(&trials(&g, &s)).unwrap();
        let b = compute_eer(&trials(&neg(&s), &neg(&g))).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn eer_is_a_percentage(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (g, s) = random_scores(&mut rng);
        let eer = compute_eer(&trials(&g, &s)).unwrap();
        prop_assert!((0.0..=100.0).contains(&eer));
    }
}
