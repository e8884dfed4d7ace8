use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use stepcast::dataset::*;
use stepcast::rng::subsystem_rng;

#[test]
fn interval_sampler_is_uniform() {
    let sampler = DeltaTSampler::default();
    let mut rng = subsystem_rng(11, "train/batches");
    let n = 30_000;
    let mut counts = [0usize; 3];
    for _ in 0..n {
        let draw = sampler.sample(&mut rng);
        let k = sampler.support().iter().position(|&h| h == draw).unwrap();
        counts[k] += 1;
    }
    let expected = n as f64 / 3.0;
    let mut chi2 = 0.0;
    for &c in &counts {
        let f = c as f64 / n as f64;
        assert!((0.32..=0.347).contains(&f), "frequency {f}");
        chi2 += (c as f64 - expected).powi(2) / expected;
    }
    let p = 1.0 - ChiSquared::new(2.0).unwrap().cdf(chi2);
    assert!(p > 0.001, "chi-square {chi2}, p = {p}");
}

#[test]
fn synthetic_data_is_deterministic_on_disk() {
    let cfg = SynthConfig::toy(7, 40);
    let a = synth_atmosphere(&cfg).unwrap();
    let b = synth_atmosphere(&cfg).unwrap();
    assert_eq!(a, b);
    let c = synth_atmosphere(&SynthConfig::toy(8, 40)).unwrap();
    assert_ne!(a.states[5].values(), c.states[5].values());

    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    write_series(d1.path(), &a).unwrap();
    write_series(d2.path(), &b).unwrap();
    let mut names: Vec<_> = std::fs::read_dir(d1.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 2);
    for name in names {
        let x = std::fs::read(d1.path().join(&name)).unwrap();
        let y = std::fs::read(d2.path().join(&name)).unwrap();
        assert_eq!(x, y, "{name:?}");
    }
    assert_eq!(read_series(d1.path()).unwrap(), a);
}

#[test]
fn synthetic_fields_are_finite_and_vary() {
    let s = synth_atmosphere(&SynthConfig::toy(3, 30)).unwrap();
    assert_eq!(s.shape(), [s.catalog.n_channels(), 16, 32]);
    assert!(s.states.iter().all(|x| x.values().iter().all(|v| v.is_finite())));
    for w in s.states.windows(2) {
        assert_eq!(w[1].valid_time - w[0].valid_time, STEP_HOURS);
        assert_ne!(w[0].values(), w[1].values());
    }
}

#[test]
fn normalization_roundtrip_and_pairs() {
    let s = synth_atmosphere(&SynthConfig::toy(5, 20)).unwrap();
    let norm = compute_norm_stats(&s.states).unwrap();
    let n = norm.normalize_series(&s).unwrap();
    for (raw, z) in s.states.iter().zip(&n.states) {
        let back = norm.denormalize(z).unwrap();
        for (a, b) in raw.values().iter().zip(back.values()) {
            assert!((a - b).abs() <= 1e-3 * a.abs().max(1.0));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pair = make_training_pair(&n, 3, &DeltaTSampler::default(), &mut rng, OutOfRange::Error).unwrap();
    let k = 3 + pair.delta_hours as usize / STEP_HOURS as usize;
    let want = delta_target(&n.states[3], &n.states[k]).unwrap();
    assert_eq!(pair.target, want);
    assert_eq!(pair.x0, n.states[3]);
}
