use eitphys::phantom::*;
use eitphys::sigproc::{align_records, mean_sd, ChannelId, Device};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, sa) = mean_sd(a);
    let (mb, sb) = mean_sd(b);
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() as f64 * sa * sb)
}

fn sampled_params(seed: u64) -> PatientParams {
    PatientParams::sample(&mut ChaCha8Rng::seed_from_u64(seed))
}

fn fixed_lags(eit: i64, monitor: i64) -> RecordOptions {
    RecordOptions { lags: LagSpec::Fixed { eit, monitor }, ..RecordOptions::default() }
}

#[test]
fn pressure_controlled_step_response() {
    let p = PatientParams { resistance: 10.0, lung_compliance: 50.0, driving_pressure: 15.0, peep: 5.0, ..PatientParams::reference() };
    let mech = Mechanics::new(&p);
    let tau = mech.time_constant(p.lung_compliance);
    let steps = (5.0 * tau * SIM_RATE).round() as usize;
    let (v, _, paw) = integrate(&mech, &vec![Phase::PcInspiration; steps + 1], 0.0, SIM_RATE);
    let end = v[steps];
    assert!((end - 750.0).abs() < 0.01 * 750.0, "end-inspiratory volume {end}");
    assert!(paw.iter().all(|&x| x == 20.0));
}

#[test]
fn passive_expiration_matches_exponential() {
    let p = PatientParams { resistance: 20.0, lung_compliance: 50.0, chest_wall_compliance: 200.0, ..PatientParams::reference() };
    let mech = Mechanics::new(&p);
    let tau = mech.time_constant(mech.total_compliance);
    assert!((tau - 0.8).abs() < 1e-12);
    let steps = (tau * SIM_RATE).round() as usize;
    let v0 = 600.0;
    let (v, f, _) = integrate(&mech, &vec![Phase::Expiration; steps + 1], v0, SIM_RATE);
    let exact = v0 * (-1.0f64).exp();
    assert!((v[steps] - exact).abs() < 0.01 * exact, "{} vs {exact}", v[steps]);
    assert!(f.iter().all(|&x| x < 0.0));
}

#[test]
fn negative_compliance_is_rejected() {
    let p = PatientParams { lung_compliance: -1.0, ..PatientParams::reference() };
    assert!(matches!(p.validate(), Err(PhantomError::Params(_))));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(simulate_raw(&p, 10.0, &mut rng).is_err());
}

/// Breath-level checks on one raw simulation.
fn check_raw_invariants(raw: &RawSimulation, p: &PatientParams) {
    let dt = 1.0 / raw.rate;
    // Pressure identity, exact.
    for i in 0..raw.len() {
        assert_eq!(raw.p_tp[i] + raw.p_es[i] - raw.p_aw[i], 0.0, "sample {i}");
    }
    // Volume against the running integral of flow.
    let mut integral = 0.0;
    for i in 0..raw.len() {
        assert!((raw.volume[i] - integral).abs() < 1.0, "sample {i}: V {} vs {integral}", raw.volume[i]);
        integral += 1000.0 * raw.flow[i] * dt;
    }
    // Mode fingerprints per inspiratory run.
    let mut i = 0;
    while i < raw.len() {
        let same = |a: Phase, b: Phase| std::mem::discriminant(&a) == std::mem::discriminant(&b);
        let mut j = i;
        while j < raw.len() && same(raw.phase[j], raw.phase[i]) {
            j += 1;
        }
        match raw.phase[i] {
            Phase::PcInspiration => {
                let paw = &raw.p_aw[i..j];
                let (_, sd) = mean_sd(paw);
                let lift = paw.iter().map(|x| x - p.peep).sum::<f64>() / paw.len() as f64;
                assert!(sd / lift < 0.05, "PC run {i}..{j}: {sd} / {lift}");
            }
            Phase::VcFlow { .. } => {
                let (m, sd) = mean_sd(&raw.flow[i..j]);
                assert!(m > 0.0 && sd / m < 0.05, "VC run {i}..{j}: {sd} / {m}");
            }
            _ => {}
        }
        i = j;
    }
}

#[test]
fn raw_invariants_on_sampled_patients() {
    for seed in 0..6 {
        let p = sampled_params(seed);
        let raw = simulate_raw(&p, 90.0, &mut ChaCha8Rng::seed_from_u64(100 + seed)).unwrap();
        assert!(raw.mode.contains(&VentMode::Pc) && raw.mode.contains(&VentMode::Vc));
        check_raw_invariants(&raw, &p);
    }
}

#[test]
fn peristalsis_only_touches_esophageal_pressure() {
    let with = PatientParams { peristalsis_rate: 3.0, ..sampled_params(7) };
    let without = PatientParams { peristalsis_rate: 0.0, ..with.clone() };
    let a = simulate_raw(&with, 120.0, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let b = simulate_raw(&without, 120.0, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert!(!a.events.is_empty());
    assert!(b.peristalsis.iter().all(|&x| x == 0.0));
    assert_eq!(a.volume, b.volume);
    assert_eq!(a.flow, b.flow);
    assert_eq!(a.p_aw, b.p_aw);
    assert_eq!(a.p_ab, b.p_ab);
    for e in &a.events {
        assert!(e.duration >= 3.0 && e.amplitude > 0.0);
    }
    for i in 0..a.len() {
        let d = a.p_es[i] - b.p_es[i];
        // Difference is the positive wave up to the pressure quantum.
        assert!((d - a.peristalsis[i]).abs() <= 2.0 * 2f64.powi(-16), "sample {i}");
        assert!(a.peristalsis[i] >= 0.0);
        let t = a.time(i);
        let active = a.events.iter().any(|e| t > e.start && t < e.start + e.duration);
        assert_eq!(a.peristalsis[i] > 0.0, active, "sample {i}");
    }
}

#[test]
fn record_identity_and_lags() {
    let p = sampled_params(11);
    let (rec, raw) = simulate_record_detailed(&p, 60.0, 3, &fixed_lags(9, -21)).unwrap();
    check_raw_invariants(&raw, &p);
    assert_eq!(rec.len(), 600);
    assert_eq!(rec.eit.frames(), 600);
    let (tp, es, paw) = (rec.samples(ChannelId::Ptp).unwrap(), rec.samples(ChannelId::Pes).unwrap(), rec.samples(ChannelId::PawMonitor).unwrap());
    for i in 0..rec.len() {
        assert_eq!(tp[i] + es[i] - paw[i], 0.0);
    }
    let vent = rec.samples(ChannelId::Paw).unwrap();
    // Monitor lag -21: the monitor reports ventilator sample i + 21 at index i.
    assert_eq!(&vent[21..], &paw[..600 - 21]);
    assert_eq!(rec.injected_lags[&Device::Eit], 9);
}

#[test]
fn lag_round_trip_is_exact() {
    for (k, (eit, monitor)) in [(7, -12), (-30, 30), (30, -30), (0, 25), (-17, 0), (1, -1)].into_iter().enumerate() {
        let p = sampled_params(20 + k as u64);
        let rec = simulate_record(&p, 60.0, 40 + k as u64, &fixed_lags(eit, monitor)).unwrap();
        let aligned = align_records(&rec).unwrap();
        let info = aligned.alignment.as_ref().unwrap();
        assert_eq!(info.estimated[&Device::Eit], eit, "case {k}");
        assert_eq!(info.estimated[&Device::Monitor], monitor, "case {k}");
        assert!(info.residual.values().all(|&r| r == 0), "case {k}: {:?}", info.residual);
        assert!(info.unalignable.is_empty());
        let shift = (eit.max(monitor).max(0) - eit.min(monitor).min(0)) as usize;
        assert_eq!(aligned.len(), rec.len() - shift);
        assert_eq!(aligned.samples(ChannelId::Paw), aligned.samples(ChannelId::PawMonitor));
    }
}

#[test]
fn zero_lag_alignment_is_identity() {
    let rec = simulate_record(&sampled_params(3), 40.0, 9, &fixed_lags(0, 0)).unwrap();
    let aligned = align_records(&rec).unwrap();
    assert_eq!(aligned.channels, rec.channels);
    assert_eq!(aligned.eit, rec.eit);
}

#[test]
fn noise_monitor_is_dropped() {
    let mut rec = simulate_record(&sampled_params(4), 60.0, 10, &fixed_lags(3, 5)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let noise: Vec<f64> = (0..rec.len()).map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng)).collect();
    rec.channels.get_mut(&ChannelId::PawMonitor).unwrap().samples = noise;
    let aligned = align_records(&rec).unwrap();
    let info = aligned.alignment.as_ref().unwrap();
    assert_eq!(info.unalignable, vec![Device::Monitor]);
    assert!(info.peak_correlation[&Device::Monitor] < 0.2);
    assert!(aligned.channels.keys().all(|c| c.device() != Device::Monitor));
    assert_eq!(info.estimated[&Device::Eit], 3);
}

#[test]
fn noiseless_eit_sum_is_affine_in_volume() {
    let opts = RecordOptions {
        lags: LagSpec::Fixed { eit: 0, monitor: 0 },
        eit: EitOptions { noise_sd: 0.0, cardiac_gain: 0.0, ..EitOptions::default() },
    };
    let rec = simulate_record(&sampled_params(5), 60.0, 1, &opts).unwrap();
    let r = pearson(&rec.eit.sums(), rec.samples(ChannelId::Volume).unwrap());
    assert!((r - 1.0).abs() < 1e-9, "{r}");
}

#[test]
fn zero_gains_give_zero_frames() {
    let opts = RecordOptions {
        lags: LagSpec::Fixed { eit: 0, monitor: 0 },
        eit: EitOptions { noise_sd: 0.0, cardiac_gain: 0.0, lung_gain: 0.0, ..EitOptions::default() },
    };
    let rec = simulate_record(&sampled_params(6), 30.0, 1, &opts).unwrap();
    assert!(rec.eit.data().iter().all(|&x| x == 0.0));
    let spec = TaskSpec::new(Task::Volume, eitphys::nets::Variant::EitOnly).unwrap();
    let seg = make_segment(&rec, 0, &spec, 0, SEGMENT_LEN).unwrap();
    assert!(seg.eit_degenerate);
    assert!(seg.eit.iter().all(|x| x.is_finite()));
}

#[test]
fn anatomy_differs_between_patients() {
    let (a, b) = (Anatomy::from_seed(1), Anatomy::from_seed(2));
    let (ca, cb) = (a.lung_centroid(), b.lung_centroid());
    let d = ((ca.0 - cb.0).powi(2) + (ca.1 - cb.1).powi(2)).sqrt();
    assert!(d >= 1.0, "centroid distance {d}");
}

#[test]
fn simulation_is_seed_deterministic() {
    let p = sampled_params(8);
    let a = simulate_record(&p, 45.0, 123, &RecordOptions::default()).unwrap();
    let b = simulate_record(&p, 45.0, 123, &RecordOptions::default()).unwrap();
    assert_eq!(a, b);
    let c = simulate_record(&p, 45.0, 124, &RecordOptions::default()).unwrap();
    assert_ne!(a.eit, c.eit);
}

#[test]
fn split_sizes() {
    let keys = |p: usize, r: usize| -> Vec<RecordKey> {
        (0..p).flat_map(|pi| (0..r).map(move |ri| RecordKey { patient_id: pi, record_id: ri })).collect()
    };
    let s = split(&keys(17, 10), SplitScheme::IntraPatient, 0).unwrap();
    assert_eq!(s.test.len(), 51);
    let k20 = keys(20, 3);
    let s = split(&k20, SplitScheme::InterPatient, 0).unwrap();
    let mut test_patients: Vec<usize> = s.test.iter().map(|&i| k20[i].patient_id).collect();
    test_patients.dedup();
    assert_eq!(test_patients.len(), 2);
    assert!(matches!(split(&keys(9, 5), SplitScheme::InterPatient, 0), Err(PhantomError::Config(_))));
    assert!(matches!(split(&keys(3, 3), SplitScheme::IntraPatient, 0), Err(PhantomError::Config(_))));
    let s = split(&keys(1, 4), SplitScheme::IntraPatient, 0).unwrap();
    assert_eq!((s.train.len(), s.test.len()), (1, 3));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn splits_partition_the_dataset(patients in 10usize..25, records in 4usize..9, seed in any::<u64>(), intra in any::<bool>()) {
        let keys: Vec<RecordKey> = (0..patients).flat_map(|p| (0..records).map(move |r| RecordKey { patient_id: p, record_id: r })).collect();
        let scheme = if intra { SplitScheme::IntraPatient } else { SplitScheme::InterPatient };
        let s = split(&keys, scheme, seed).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..keys.len()).collect::<Vec<_>>());
        if !intra {
            // Whole patients only.
            for &i in &s.test {
                prop_assert!(s.train.iter().all(|&j| keys[j].patient_id != keys[i].patient_id));
            }
        }
    }

    #[test]
    fn sampled_params_are_valid(seed in any::<u64>()) {
        let p = sampled_params(seed);
        prop_assert!(p.validate().is_ok());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        prop_assert!(p.vary_settings(&mut rng).validate().is_ok());
    }
}

#[test]
fn segments_from_a_sixty_second_record() {
    let rec = simulate_record(&sampled_params(9), 60.0, 2, &RecordOptions::default()).unwrap();
    let spec = TaskSpec::new(Task::Volume, eitphys::nets::Variant::EitOnly).unwrap();
    let segs = crop_segments(&rec, 0, &spec, 10, SEGMENT_LEN, &mut ChaCha8Rng::seed_from_u64(1));
    assert_eq!(segs.len(), 10);
    for s in &segs {
        assert_eq!(s.len, 128);
        assert_eq!(s.eit.len(), 128 * FRAME_LEN);
        let x: Vec<f64> = s.eit.iter().map(|&v| v as f64).collect();
        let (m, sd) = mean_sd(&x);
        assert!(m.abs() < 1e-5 && (sd - 1.0).abs() < 1e-5, "{m} {sd}");
        assert_eq!(s.scales[0], (180.0, 189.0));
        let model: Vec<f64> = s.raw_targets[0].iter().map(|v| (v - 180.0) / 189.0).collect();
        let back = s.to_physical(0, &model);
        for (a, b) in back.iter().zip(&s.raw_targets[0]) {
            assert!((a - b).abs() < 1e-12);
        }
        let stored: Vec<f64> = s.targets.iter().map(|&v| v as f64).collect();
        for (a, b) in s.to_physical(0, &stored).iter().zip(&s.raw_targets[0]) {
            assert!((a - b).abs() < 1e-4);
        }
    }
    assert_eq!(tile_segments(&rec, 0, &spec, SEGMENT_LEN).len(), 4);
    let short = simulate_record(&sampled_params(9), 30.0, 2, &RecordOptions::default()).unwrap();
    assert_eq!(short.len(), 300);
    assert!(crop_segments(&short, 0, &spec, 2, 400, &mut ChaCha8Rng::seed_from_u64(1)).is_empty());
}

#[test]
fn normalized_and_auxiliary_targets() {
    use eitphys::nets::Variant;
    let rec = simulate_record(&sampled_params(10), 40.0, 2, &RecordOptions::default()).unwrap();
    let pab = make_segment(&rec, 0, &TaskSpec::new(Task::Pab, Variant::EitOnly).unwrap(), 10, 128).unwrap();
    let t: Vec<f64> = pab.targets.iter().map(|&v| v as f64).collect();
    let (m, sd) = mean_sd(&t);
    assert!(m.abs() < 1e-5 && (sd - 1.0).abs() < 1e-5);
    let v3 = make_segment(&rec, 0, &TaskSpec::new(Task::Ptp, Variant::EitPlusPaw).unwrap(), 10, 128).unwrap();
    assert_eq!(v3.channels(), 1);
    let paw = rec.samples(ChannelId::Paw).unwrap();
    assert_eq!(v3.aux_paw.as_ref().unwrap()[0], paw[10] as f32);
    let v2 = TaskSpec::new(Task::Ptp, Variant::EitJointOutputs).unwrap();
    assert_eq!(v2.output_channels(), vec![ChannelId::Ptp, ChannelId::Paw]);
    assert!(TaskSpec::new(Task::Volume, Variant::EitPlusPaw).is_err());
}

#[test]
fn dataset_round_trips_through_disk() {
    let cohort = CohortConfig { patients: 2, records_per_patient: 2, record_duration: 30.0, seed: 4, ..CohortConfig::default() };
    let ds = build_dataset(&cohort).unwrap();
    assert_eq!(ds, build_dataset(&cohort).unwrap());
    assert_eq!(ds.records.len(), 4);
    assert_eq!(ds.records[3].patient_id, 1);
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(&cohort, &ds.records, false, dir.path()).unwrap();
    assert_eq!(manifest.records.len(), 4);
    let (back_manifest, back) = read_dataset(dir.path()).unwrap();
    assert_eq!(back_manifest, manifest);
    assert_eq!(back, ds.records);
    let aligned = align_records(&ds.records[0]).unwrap();
    let rdir = dir.path().join("single");
    write_record(&aligned, &rdir).unwrap();
    assert_eq!(read_record(&rdir).unwrap(), aligned);
}
