mod support;

use eitphys::sigproc::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::dtw_oracle::{as_f64, dtw_by_paths, ternary_sequences};

/// Breathing-like test signal at 10 Hz: fundamental, one harmonic, slow drift.
fn breath(n: usize, offset: usize) -> Vec<f64> {
    (offset..offset + n)
        .map(|i| {
            let t = i as f64 / TARGET_RATE;
            (2.0 * std::f64::consts::PI * 0.25 * t).sin() + 0.3 * (2.0 * std::f64::consts::PI * 0.5 * t + 0.4).sin() + 0.02 * t
        })
        .collect()
}

#[test]
fn dtw_worked_examples() {
    assert_eq!(dtw(&[1.0, 2.0, 3.0], &[1.0, 2.0, 2.0, 3.0]).unwrap(), 0.0);
    assert_eq!(dtw(&[0.0], &[1.0, 2.0]).unwrap(), 3.0);
    assert_eq!(dtw(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 2.0);
    assert!(matches!(dtw(&[], &[1.0]), Err(SigprocError::Usage(_))));
}

#[test]
fn dtw_matches_path_enumeration_for_all_short_pairs() {
    let seqs: Vec<Vec<u8>> = (1..=5).flat_map(ternary_sequences).collect();
    let vals: Vec<Vec<f64>> = seqs.iter().map(|s| as_f64(s)).collect();
    for (a, fa) in seqs.iter().zip(&vals) {
        for (b, fb) in seqs.iter().zip(&vals) {
            assert_eq!(dtw(fa, fb).unwrap(), dtw_by_paths(a, b), "{a:?} vs {b:?}");
        }
    }
}

#[test]
fn dtw_matches_path_enumeration_up_to_length_eight() {
    // Every pair with one side of length <= 2, and a fixed random sample of the rest.
    let long: Vec<Vec<u8>> = (6..=8).flat_map(ternary_sequences).collect();
    let short: Vec<Vec<u8>> = (1..=2).flat_map(ternary_sequences).collect();
    for a in &long {
        for b in &short {
            assert_eq!(dtw(&as_f64(a), &as_f64(b)).unwrap(), dtw_by_paths(a, b));
            assert_eq!(dtw(&as_f64(b), &as_f64(a)).unwrap(), dtw_by_paths(b, a));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<u8> { (0..rng.gen_range(3..=8)).map(|_| rng.gen_range(0..3u8)).collect() };
    for _ in 0..3000 {
        let (a, b) = (draw(&mut rng), draw(&mut rng));
        assert_eq!(dtw(&as_f64(&a), &as_f64(&b)).unwrap(), dtw_by_paths(&a, &b), "{a:?} vs {b:?}");
    }
}

proptest! {
    #[test]
    fn dtw_is_symmetric_and_bounded(a in prop::collection::vec(-5.0f64..5.0, 1..40), b in prop::collection::vec(-5.0f64..5.0, 1..40)) {
        let ab = dtw(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - dtw(&b, &a).unwrap()).abs() <= 1e-9 * (1.0 + ab));
        prop_assert_eq!(dtw(&a, &a).unwrap(), 0.0);
        if a.len() == b.len() {
            let diagonal: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
            prop_assert!(ab <= diagonal + 1e-9);
        }
    }

    #[test]
    fn rmse_of_a_constant_offset_is_its_magnitude(x in prop::collection::vec(-100i32..100, 1..64), c in -64i32..64) {
        // Dyadic values keep every sum exact.
        let pred: Vec<f64> = x.iter().map(|&v| v as f64 / 8.0).collect();
        let c = c as f64 / 4.0;
        let shifted: Vec<f64> = pred.iter().map(|v| v + c).collect();
        prop_assert_eq!(rmse(&pred, &shifted).unwrap(), c.abs());
    }

    #[test]
    fn standardize_is_idempotent(x in prop::collection::vec(-1e3f64..1e3, 2..100)) {
        let s = standardize(&x).unwrap();
        prop_assume!(!s.degenerate);
        let (m, sd) = mean_sd(&s.values);
        prop_assert!(m.abs() < 1e-9 && (sd - 1.0).abs() < 1e-9);
        let again = standardize(&s.values).unwrap();
        for (a, b) in again.values.iter().zip(&s.values) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn rmse_identity_and_errors() {
    let x = breath(64, 0);
    assert_eq!(rmse(&x, &x).unwrap(), 0.0);
    assert_eq!(shifted_rmse(&x, &x, 10).unwrap(), 0.0);
    assert!(rmse(&x, &x[1..]).is_err());
    assert!(rmse(&[], &[]).is_err());
    assert!(shifted_rmse(&x[..20], &x[..20], 10).is_err());
}

#[test]
fn shifted_rmse_undoes_pure_shifts() {
    let base = breath(200, 0);
    let pred = &base[20..148];
    for k in -10i64..=10 {
        let tgt = &base[(20 + k) as usize..(148 + k) as usize];
        let s = shifted_rmse(pred, tgt, 10).unwrap();
        assert!(s < 1e-6, "k = {k}: shifted rmse {s}");
        if k.abs() >= 3 {
            let sd = mean_sd(tgt).1;
            assert!(rmse(pred, tgt).unwrap() > 0.2 * sd);
        }
    }
}

#[test]
fn rating_detects_scale_at_perfect_shape() {
    let th = RatingThresholds::default();
    let tgt = breath(128, 7);
    for i in 1..=300 {
        let c = i as f64 / 100.0;
        let pred: Vec<f64> = tgt.iter().map(|v| c * v).collect();
        let expected = if (0.7..=1.4).contains(&c) { VisualRating::Plus } else { VisualRating::Circle };
        assert_eq!(visual_rating(&pred, &tgt, &th).unwrap(), expected, "c = {c}");
    }
    let third: Vec<f64> = tgt.iter().map(|v| 0.3 * v).collect();
    assert_eq!(visual_rating(&third, &tgt, &th).unwrap(), VisualRating::Circle);
    let flat = vec![1.0; 128];
    assert_eq!(visual_rating(&flat, &tgt, &th).unwrap(), VisualRating::Minus);
}

#[test]
fn rating_rejects_wrong_frequency() {
    let th = RatingThresholds::default();
    let tgt = breath(128, 0);
    let fast: Vec<f64> = (0..128).map(|i| (2.0 * std::f64::consts::PI * 0.6 * i as f64 / TARGET_RATE).sin()).collect();
    assert_eq!(visual_rating(&fast, &tgt, &th).unwrap(), VisualRating::Minus);
}

#[test]
fn lag_estimation_examples() {
    // Frequency-modulated, so no lag other than the true one correlates perfectly.
    let base: Vec<f64> = (0..300)
        .map(|i| {
            let t = i as f64 / TARGET_RATE;
            (2.0 * std::f64::consts::PI * (0.25 * t + 0.4 * (0.05 * t).sin())).sin()
        })
        .collect();
    let a = &base[40..240];
    for lag in [-25i64, -3, 0, 4, 30] {
        let b = &base[(40 - lag) as usize..(240 - lag) as usize];
        let est = estimate_lag(a, b, 40).unwrap();
        assert_eq!(est.lag, lag);
        assert!((est.correlation - 1.0).abs() < 1e-12);
    }
    assert!(matches!(estimate_lag(&a[..10], &a[..10], 10), Err(SigprocError::Usage(_))));
    assert!(estimate_lag(&[1.0; 50], &[2.0; 50], 5).is_err());
}

#[test]
fn resampling_keeps_slow_content() {
    let rate = 100.0;
    let x: Vec<f64> = (0..3000).map(|i| (2.0 * std::f64::consts::PI * 0.3 * i as f64 / rate).sin()).collect();
    let y = resample(&x, rate, TARGET_RATE).unwrap();
    assert_eq!(y.len(), 300);
    // Away from the edges the low-pass is transparent at 0.3 Hz.
    for (k, v) in y.iter().enumerate().skip(20).take(260) {
        assert!((v - x[10 * k]).abs() < 1e-3, "sample {k}");
    }
    assert!(matches!(resample(&x, 5.0, TARGET_RATE), Err(SigprocError::UnsupportedRate { .. })));
    let same = resample(&y, TARGET_RATE, TARGET_RATE).unwrap();
    assert_eq!(same, y);
}

#[test]
fn empty_report_aggregates_cleanly() {
    let row = TaskMetrics::aggregate("volume", "test", "1", ChannelId::Volume, RmseKind::Plain, &[], &[]);
    assert_eq!(row.segments, 0);
    assert_eq!(row.plus_rate(), 0.0);
    let report = MetricsReport { rows: vec![row] };
    assert!(report.to_csv().starts_with("task,split,variant"));
}
