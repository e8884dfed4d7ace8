use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stepcast::autodiff::{Tape, Tensor};
use stepcast::dataset::*;
use stepcast::grids::LatLonGrid;
use stepcast::stepsnet::{read_checkpoint, Checkpoint, ModelConfig, ModelParams, StepsNet};
use stepcast::training::*;

fn loop_oracle(pred: &[f64], target: &[f64], w: &[f64], lat: &[f64], n_lon: usize) -> f64 {
    let (v, h) = (w.len(), lat.len());
    let mut s = 0.0;
    for c in 0..v {
        for i in 0..h {
            for j in 0..n_lon {
                let k = (c * h + i) * n_lon + j;
                s += w[c] * lat[i] * (pred[k] - target[k]).powi(2);
            }
        }
    }
    s / (v * h * n_lon) as f64
}

#[test]
fn pressure_weights_by_hand() {
    let two = VariableCatalog::from_names(&["T"], &[1000, 500], &[]);
    let w = pressure_weights(&two);
    assert!((w[0] - 4.0 / 3.0).abs() < 1e-12 && (w[1] - 2.0 / 3.0).abs() < 1e-12);

    let flat = VariableCatalog::from_names(&["U", "V", "T"], &[500], &[]);
    assert!(pressure_weights(&flat).iter().all(|&x| (x - 1.0).abs() < 1e-12));

    let full = VariableCatalog::full();
    let w = pressure_weights(&full);
    assert!((w.iter().sum::<f64>() / w.len() as f64 - 1.0).abs() < 1e-12);
    let t1000 = full.channel_by_label("T1000").unwrap();
    let t50 = full.channel_by_label("T50").unwrap();
    assert!(w[t1000] > w[t50]);
    assert_eq!(w[full.channel_by_label("MSLP").unwrap()], w[t1000]);
}

#[test]
fn weighted_mse_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let (v, h, n_lon) = (3, 4, 5);
        let w: Vec<f64> = (0..v).map(|_| rng.gen_range(0.1..2.0)).collect();
        let lat: Vec<f64> = (0..h).map(|_| rng.gen_range(0.0..2.0)).collect();
        let weights = LossWeights::from_parts(w.clone(), lat.clone(), n_lon).unwrap();
        let p: Vec<f64> = (0..v * h * n_lon).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let t: Vec<f64> = (0..v * h * n_lon).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let got = weighted_mse(&p, &t, &weights).unwrap();
        assert!((got - loop_oracle(&p, &t, &w, &lat, n_lon)).abs() < 1e-12);
    }
}

#[test]
fn weighted_mse_trivial_cases() {
    let weights = LossWeights::uniform(2, 3, 4);
    let x: Vec<f64> = (0..24).map(|k| k as f64 * 0.3).collect();
    assert_eq!(weighted_mse(&x, &x, &weights).unwrap(), 0.0);
    let shifted: Vec<f64> = x.iter().map(|v| v + 0.7).collect();
    assert!((weighted_mse(&shifted, &x, &weights).unwrap() - 0.49).abs() < 1e-12);
    assert!(weighted_mse(&x[1..], &x[1..], &weights).is_err());
    let mut bad = x.clone();
    bad[0] = f64::INFINITY;
    assert!(weighted_mse(&bad, &x, &weights).is_err());
}

proptest! {
    #[test]
    fn uniform_weights_give_plain_mse(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p: Vec<f64> = (0..60).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let t: Vec<f64> = (0..60).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let plain = p.iter().zip(&t).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 60.0;
        let got = weighted_mse(&p, &t, &LossWeights::uniform(3, 4, 5)).unwrap();
        prop_assert!((got - plain).abs() < 1e-12);
    }

    #[test]
    fn loss_is_invariant_under_longitude_rotation(seed in any::<u64>(), shift in 0usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = LossWeights::from_parts(vec![0.5, 1.5], vec![0.2, 1.0, 1.8], 5).unwrap();
        let p: Vec<f64> = (0..30).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let t: Vec<f64> = (0..30).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let rot = |x: &[f64]| -> Vec<f64> {
            x.chunks(5).flat_map(|row| (0..5).map(move |j| row[(j + shift) % 5])).collect()
        };
        let a = weighted_mse(&p, &t, &weights).unwrap();
        let b = weighted_mse(&rot(&p), &rot(&t), &weights).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn ema_is_linear(seed in any::<u64>(), a in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mk = |rng: &mut ChaCha8Rng| ModelParams {
            names: vec!["x".into()],
            tensors: vec![Tensor::from_fn(&[4], |_| rng.gen_range(-1.0..1.0))],
        };
        let scaled = |p: &ModelParams<f64>| ModelParams {
            names: p.names.clone(),
            tensors: vec![Tensor::from_fn(&[4], |k| a * p.tensors[0].data()[k])],
        };
        let p0 = mk(&mut rng);
        let mut e1 = EmaState::new(&p0, 0.9);
        let mut e2 = EmaState::new(&scaled(&p0), 0.9);
        for _ in 0..5 {
            let p = mk(&mut rng);
            ema_update(&mut e1, &p).unwrap();
            ema_update(&mut e2, &scaled(&p)).unwrap();
        }
        for (x, y) in e1.params.tensors[0].data().iter().zip(e2.params.tensors[0].data()) {
            prop_assert!((a * x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn loss_gradient_matches_closed_form_and_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let weights = LossWeights::from_parts(vec![0.7, 1.3], vec![0.5, 1.0, 1.5], 4).unwrap();
    let pred: Vec<f64> = (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let target: Vec<f64> = (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut tape = Tape::<f64>::new();
    let p = tape.param(Tensor::new(vec![2, 3, 4], pred.clone()).unwrap());
    let loss = weighted_mse_var(&mut tape, p, &target, &weights).unwrap();
    let direct = weighted_mse(&pred, &target, &weights).unwrap();
    assert!((tape.value(loss).item() - direct).abs() < 1e-14);
    let g = tape.grad(loss, &[p]).unwrap().remove(0);
    let ew = weights.element_weights();
    let h = 1e-6;
    for k in 0..24 {
        let closed = 2.0 * ew[k] * (pred[k] - target[k]);
        assert!((g.data()[k] - closed).abs() < 1e-14);
        let mut up = pred.clone();
        up[k] += h;
        let mut dn = pred.clone();
        dn[k] -= h;
        let fd = (weighted_mse(&up, &target, &weights).unwrap() - weighted_mse(&dn, &target, &weights).unwrap()) / (2.0 * h);
        assert!((fd - closed).abs() < 1e-6);
    }
}

fn scalar(v: f64) -> ModelParams<f64> {
    ModelParams {
        names: vec!["theta".into()],
        tensors: vec![Tensor::new(vec![1], vec![v]).unwrap()],
    }
}

#[test]
fn adamw_zero_gradient_without_decay_is_a_no_op() {
    let hyper = Hyperparams {
        weight_decay: 0.0,
        ..Hyperparams::default()
    };
    let mut p = scalar(1.5);
    let mut s = AdamState::new(&p);
    let g = vec![Tensor::new(vec![1], vec![0.0]).unwrap()];
    for _ in 0..5 {
        adamw_step(&mut p, &g, &mut s, &hyper, 1e-2, NonFinitePolicy::Fail).unwrap();
    }
    assert_eq!(p.tensors[0].data()[0], 1.5);
}

#[test]
fn adamw_scalar_step_by_hand() {
    let hyper = Hyperparams::default();
    let mut p = scalar(2.0);
    let mut s = AdamState::new(&p);
    s.m.tensors[0].data_mut()[0] = 0.1;
    s.v.tensors[0].data_mut()[0] = 0.04;
    s.t = 3;
    let g = vec![Tensor::new(vec![1], vec![0.5]).unwrap()];
    let lr = 1e-3;
    adamw_step(&mut p, &g, &mut s, &hyper, lr, NonFinitePolicy::Fail).unwrap();
    // m = 0.9·0.1 + 0.1·0.5 = 0.14 ; v = 0.95·0.04 + 0.05·0.25 = 0.0505 ; t = 4
    let mhat = 0.14 / (1.0 - 0.9f64.powi(4));
    let vhat = 0.0505 / (1.0 - 0.95f64.powi(4));
    let want = 2.0 * (1.0 - lr * 1e-5) - lr * mhat / (vhat.sqrt() + 1e-8);
    assert!((s.m.tensors[0].data()[0] - 0.14).abs() < 1e-15);
    assert!((s.v.tensors[0].data()[0] - 0.0505).abs() < 1e-15);
    assert!((p.tensors[0].data()[0] - want).abs() < 1e-14);
    assert_eq!(s.t, 4);
}

#[test]
fn adamw_decay_only_shrinks_by_lr_times_decay() {
    let hyper = Hyperparams {
        weight_decay: 0.1,
        ..Hyperparams::default()
    };
    let mut p = scalar(3.0);
    let mut s = AdamState::new(&p);
    let g = vec![Tensor::new(vec![1], vec![0.0]).unwrap()];
    adamw_step(&mut p, &g, &mut s, &hyper, 0.01, NonFinitePolicy::Fail).unwrap();
    assert!((p.tensors[0].data()[0] - (3.0 - 0.01 * 0.1 * 3.0)).abs() < 1e-15);
}

#[test]
fn adamw_non_finite_policy() {
    let hyper = Hyperparams::default();
    let mut p = scalar(1.0);
    let mut s = AdamState::new(&p);
    let g = vec![Tensor::new(vec![1], vec![f64::NAN]).unwrap()];
    assert!(!adamw_step(&mut p, &g, &mut s, &hyper, 0.1, NonFinitePolicy::Skip).unwrap());
    assert_eq!((p.tensors[0].data()[0], s.t), (1.0, 0));
    assert!(adamw_step(&mut p, &g, &mut s, &hyper, 0.1, NonFinitePolicy::Fail).is_err());
    let wrong = vec![Tensor::new(vec![2], vec![0.0, 0.0]).unwrap()];
    assert!(adamw_step(&mut p, &wrong, &mut s, &hyper, 0.1, NonFinitePolicy::Fail).is_err());
}

#[test]
fn ema_algebra() {
    let target = scalar(1.0);
    let mut same = EmaState::new(&target, 0.9);
    ema_update(&mut same, &target).unwrap();
    assert_eq!(same.params, target);

    let mut ema = EmaState::new(&scalar(0.0), 0.9);
    for _ in 0..10 {
        ema_update(&mut ema, &target).unwrap();
    }
    let gap = 1.0 - ema.params.tensors[0].data()[0];
    assert!((gap - 0.9f64.powi(10)).abs() < 1e-12);
    assert_eq!(format!("{gap:.5}"), "0.34868");

    let mut instant = EmaState::new(&scalar(5.0), 0.0);
    ema_update(&mut instant, &target).unwrap();
    assert_eq!(instant.params, target);
}

#[test]
fn schedule_warms_up_then_decays() {
    let hyper = Hyperparams::default();
    let s = LrSchedule::new(&hyper, 1000);
    assert_eq!(s.warmup_steps, 10);
    assert!((s.lr(0) - 5e-5).abs() < 1e-15);
    assert!((s.lr(9) - 5e-4).abs() < 1e-15);
    assert!((s.lr(10) - 5e-4).abs() < 1e-15);
    assert!((s.lr(1000) - 5e-5).abs() < 1e-15);
    for k in 10..999 {
        assert!(s.lr(k + 1) <= s.lr(k));
    }
}

#[test]
fn hyperparams_default_to_reference_recipe() {
    let h = Hyperparams::default();
    assert_eq!((h.lr, h.beta1, h.beta2, h.weight_decay), (5e-4, 0.9, 0.95, 1e-5));
    assert_eq!((h.batch_size, h.epochs, h.ema_decay), (16, 50, 0.9));
    assert!(h.grad_clip.is_none());
    assert!(Hyperparams { ema_decay: 1.0, ..h.clone() }.validate().is_err());
    assert!(Hyperparams { lr: 0.0, ..h }.validate().is_err());
}

fn tiny_setup() -> (Series, NormStats, ModelConfig) {
    let synth = SynthConfig {
        n_lat: 8,
        n_lon: 16,
        max_wavenumber: 3,
        ..SynthConfig::toy(3, 40)
    };
    let raw = synth_atmosphere(&synth).unwrap();
    let norm = compute_norm_stats(&raw.states).unwrap();
    let series = norm.normalize_series(&raw).unwrap();
    let model = ModelConfig::new(VariableCatalog::toy(), raw.grid.clone(), 2, 16, 8, 1, 1, 2, 2, 16).unwrap();
    (series, norm, model)
}

fn tiny_train(steps: usize) -> TrainConfig {
    let mut cfg = TrainConfig {
        steps,
        seed: 5,
        ..TrainConfig::default()
    };
    cfg.hyper.batch_size = 2;
    cfg
}

#[test]
fn first_step_loss_is_loss_of_zero_prediction() {
    let (series, norm, model) = tiny_setup();
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_train(1);
    let report = train(&series, &norm, &model, &cfg, dir.path()).unwrap();

    // Replay the first batch draw.
    let mut rng = stepcast::rng::subsystem_rng(cfg.seed, "train/batches");
    let sampler = DeltaTSampler::new(cfg.delta_support.clone()).unwrap();
    let weights = LossWeights::new(&model.catalog, &model.grid).unwrap();
    let mut total = 0.0;
    for _ in 0..cfg.hyper.batch_size {
        let t = rng.gen_range(0..series.len() - 1);
        let pair = make_training_pair(&series, t, &sampler, &mut rng, OutOfRange::Resample).unwrap();
        let zero = vec![0.0f32; pair.target.len()];
        total += weighted_mse(&zero, &pair.target, &weights).unwrap();
    }
    let want = total / cfg.hyper.batch_size as f64;
    assert!((report.losses[0] - want).abs() < 1e-6 * want.max(1.0));

    let metrics = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    assert!(metrics.starts_with("step,loss,lr,wall_ms\n1,"));
}

#[test]
fn same_seed_gives_bit_identical_checkpoints() {
    let (series, norm, model) = tiny_setup();
    let cfg = TrainConfig {
        checkpoint_every: 2,
        ..tiny_train(5)
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    train(&series, &norm, &model, &cfg, a.path()).unwrap();
    train(&series, &norm, &model, &cfg, b.path()).unwrap();
    for f in [CHECKPOINT_FILE, "checkpoint_0000002.ckpt", "checkpoint_0000004.ckpt"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert_eq!(x, y, "{f} differs");
    }
    let other = TrainConfig { seed: 6, ..cfg };
    let c = tempfile::tempdir().unwrap();
    train(&series, &norm, &model, &other, c.path()).unwrap();
    assert_ne!(
        std::fs::read(a.path().join(CHECKPOINT_FILE)).unwrap(),
        std::fs::read(c.path().join(CHECKPOINT_FILE)).unwrap()
    );
}

#[test]
fn checkpoint_carries_raw_ema_and_normalization() {
    let (series, norm, model) = tiny_setup();
    let dir = tempfile::tempdir().unwrap();
    let report = train(&series, &norm, &model, &tiny_train(3), dir.path()).unwrap();
    let ckpt: Checkpoint<f32> = read_checkpoint(&report.checkpoint).unwrap();
    assert_eq!(ckpt.step, 3);
    assert!(ckpt.set("raw").is_some() && ckpt.set("ema").is_some());
    assert_ne!(ckpt.set("raw"), ckpt.set("ema"));
    assert!(ckpt.meta["schedule"]["warmup_steps"].is_u64());
    let tm = TrainedModel::load(&report.checkpoint).unwrap();
    assert_eq!(tm.norm, norm);
}

#[test]
fn short_overfit_reduces_loss() {
    let (series, norm, model) = tiny_setup();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = TrainConfig {
        overfit_one_batch: true,
        ..tiny_train(60)
    };
    cfg.hyper.lr = 2e-3;
    let r = train(&series, &norm, &model, &cfg, dir.path()).unwrap();
    assert!(r.losses[59] < 0.3 * r.losses[0], "{} -> {}", r.losses[0], r.losses[59]);
}

#[test]
fn non_finite_loss_aborts_with_a_dump() {
    let (series, norm, model) = tiny_setup();
    let huge = series
        .map_states(|s| {
            let v = s.values().iter().enumerate().map(|(k, &x)| x + 1e30 * (k % 3) as f32).collect();
            StateTensor::new(v, s.shape(), s.valid_time, true)
        })
        .unwrap();
    let mut ramp = huge.clone();
    for (t, s) in ramp.states.iter_mut().enumerate() {
        let v = s.values().iter().map(|&x| x * (1.0 + t as f32)).collect();
        *s = StateTensor::new(v, s.shape(), s.valid_time, true).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    match train(&ramp, &norm, &model, &tiny_train(2), dir.path()) {
        Err(TrainError::NonFiniteLoss { step, dump }) => {
            assert_eq!(step, 0);
            let text = std::fs::read_to_string(dump).unwrap();
            assert!(text.contains("delta_hours"));
        }
        other => panic!("expected a non-finite loss, got {other:?}"),
    }
}

#[test]
fn rejects_mismatched_or_physical_series() {
    let (series, norm, model) = tiny_setup();
    let dir = tempfile::tempdir().unwrap();
    let physical = series.map_states(|s| norm.denormalize(s)).unwrap();
    assert!(train(&physical, &norm, &model, &tiny_train(1), dir.path()).is_err());
    let other = ModelConfig::new(
        VariableCatalog::toy(),
        LatLonGrid::cell_centred(4, 16).unwrap(),
        2,
        16,
        8,
        1,
        1,
        2,
        2,
        16,
    )
    .unwrap();
    assert!(train(&series, &norm, &other, &tiny_train(1), dir.path()).is_err());
}

#[test]
fn batch_gradient_is_mean_of_sample_gradients() {
    let (series, _, model) = tiny_setup();
    let net = StepsNet::new(model.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut params: ModelParams<f64> = net.init_params(&mut rng);
    for t in &mut params.tensors {
        for v in t.data_mut() {
            *v += rng.gen_range(-0.05..0.05);
        }
    }
    let weights = LossWeights::new(&model.catalog, &model.grid).unwrap();
    let sampler = DeltaTSampler::default();
    let samples: Vec<Sample<f64>> = (0..3)
        .map(|t| Sample::from_pair(&make_training_pair(&series, t, &sampler, &mut rng, OutOfRange::Error).unwrap()))
        .collect();
    let (loss, grads) = batch_loss_and_grads(&net, &params, &samples, &weights).unwrap();
    let singles: Vec<_> = samples
        .iter()
        .map(|s| batch_loss_and_grads(&net, &params, std::slice::from_ref(s), &weights).unwrap())
        .collect();
    let mean_loss = singles.iter().map(|(l, _)| l).sum::<f64>() / 3.0;
    assert!((loss - mean_loss).abs() < 1e-12);
    for (k, g) in grads.iter().enumerate() {
        for (i, &v) in g.data().iter().enumerate() {
            let m = singles.iter().map(|(_, gs)| gs[k].data()[i]).sum::<f64>() / 3.0;
            assert!((v - m).abs() < 1e-12);
        }
    }
}
