use rand::Rng;
use sketchgen::config::RunConfig;
use sketchgen::data::{generate_dataset, split_dataset, labels, DataConfig};
use sketchgen::loss::LossKind;
use sketchgen::models::{Encoder, FeatureStack};
use sketchgen::nn::{ParamKind, ParamStore};
use sketchgen::rng;
use sketchgen::train::*;
use sketchgen::Tensor;

fn store(values: &[f64]) -> (ParamStore<f64>, sketchgen::nn::ParamId) {
    let mut s = ParamStore::new();
    let id = s.add("w", Tensor::new([values.len()], values.to_vec()).unwrap(), ParamKind::Weight);
    (s, id)
}

#[test]
fn first_adam_step_moves_by_lr_against_the_gradient_sign() {
    let mut r = rng::stream(1, "adam", 0);
    let p0: Vec<f64> = (0..50).map(|_| r.gen_range(-1.0..1.0)).collect();
    let g: Vec<f64> = (0..50).map(|_| r.gen_range(-10.0..10.0)).collect();
    let (mut s, id) = store(&p0);
    let mut st = AdamState::new(AdamConfig::with_lr(1e-3), &s);
    adam_step(&mut s, &[(id, g.clone())], &mut st).unwrap();
    for ((p, q), g) in s.get(id).data().iter().zip(&p0).zip(&g) {
        assert!((p - q + 1e-3 * g.signum()).abs() < 1e-9);
    }
    assert_eq!(st.step, 1);
}

#[test]
fn zero_gradient_never_moves_parameters() {
    let (mut s, id) = store(&[0.3, -2.0, 5.0]);
    let before = s.clone();
    let mut st = AdamState::new(AdamConfig::with_lr(0.1), &s);
    for _ in 0..100 {
        adam_step(&mut s, &[(id, vec![0.0; 3])], &mut st).unwrap();
    }
    assert_eq!(s, before);
}

#[test]
fn constant_gradient_steps_follow_the_closed_form() {
    let c = AdamConfig::with_lr(1e-2);
    let g = 0.37;
    let (mut s, id) = store(&[0.0]);
    let mut st = AdamState::new(c, &s);
    let mut prev = 0.0;
    for t in 1..=500 {
        adam_step(&mut s, &[(id, vec![g])], &mut st).unwrap();
        let p = s.get(id).data()[0];
        let m = g * (1.0 - c.beta1.powi(t));
        let v = g * g * (1.0 - c.beta2.powi(t));
        let want = c.lr * (m / (1.0 - c.beta1.powi(t))) / ((v / (1.0 - c.beta2.powi(t))).sqrt() + c.eps);
        assert!(((prev - p) - want).abs() < 1e-12);
        prev = p;
    }
    let last = {
        let before = s.get(id).data()[0];
        adam_step(&mut s, &[(id, vec![g])], &mut st).unwrap();
        before - s.get(id).data()[0]
    };
    assert!((last - c.lr).abs() < 1e-7);
}

#[test]
fn frozen_and_buffer_entries_are_not_updated() {
    let mut s = ParamStore::<f64>::new();
    let w = s.add("w", Tensor::full([2], 1.0), ParamKind::Weight);
    let b = s.add("running", Tensor::full([2], 1.0), ParamKind::Buffer);
    let mut st = AdamState::new(AdamConfig::with_lr(0.1), &s);
    adam_step(&mut s, &[(b, vec![1.0, 1.0])], &mut st).unwrap();
    assert_eq!(s.get(b).data(), &[1.0, 1.0]);
    s.freeze();
    adam_step(&mut s, &[(w, vec![1.0, 1.0])], &mut st).unwrap();
    assert_eq!(s.get(w).data(), &[1.0, 1.0]);
    assert!(adam_step(&mut s, &[(w, vec![1.0])], &mut st).is_err());
}

#[test]
fn free_image_under_pixel_loss_tends_to_the_target_mean() {
    let mut r = rng::stream(5, "targets", 0);
    let targets: Vec<Tensor<f64>> = (0..5)
        .map(|_| Tensor::from_fn([1, 1, 8, 8], |_| r.gen_bool(0.3) as u8 as f64))
        .collect();
    let mean = Tensor::from_fn([1, 1, 8, 8], |i| targets.iter().map(|t| t.data()[i]).sum::<f64>() / 5.0);
    let out = optimize_free_image(&targets, 3000, AdamConfig::with_lr(5e-3)).unwrap();
    assert!(out.max_abs_diff(&mean) < 1e-3, "{}", out.max_abs_diff(&mean));
}

fn tiny() -> RunConfig {
    let mut cfg = RunConfig::desk_scale();
    cfg.data = DataConfig {
        images_per_class: 3,
        ..DataConfig::desk_scale()
    };
    cfg.train.batch_size = 8;
    cfg.train.max_epochs = 4;
    cfg
}

struct Fixture {
    cfg: RunConfig,
    samples: Vec<sketchgen::data::SketchSample>,
    train: Vec<usize>,
    test: Vec<usize>,
    encoder: Encoder,
    trunk: FeatureStack,
}

fn fixture() -> Fixture {
    let cfg = tiny();
    let samples = generate_dataset(&cfg.data).unwrap();
    let split = split_dataset(&labels(&samples), 0.67, 1, "split").unwrap();
    let mut encoder = Encoder::build(&cfg.encoder.model, 1).unwrap();
    encoder.freeze();
    let mut trunk = FeatureStack::build(&cfg.loss.trunk, 2).unwrap();
    trunk.freeze();
    Fixture {
        cfg,
        samples,
        train: split.train,
        test: split.test,
        encoder,
        trunk,
    }
}

#[test]
fn only_decoder_parameters_change() {
    let f = fixture();
    let (enc0, trunk0) = (f.encoder.params.clone(), f.trunk.params.clone());
    let mut state = TrainState::new(&f.cfg, 8).unwrap();
    let dec0 = state.decoder.params.clone();
    let frozen = Frozen {
        encoder: &f.encoder,
        trunk: Some(&f.trunk),
        classifier: None,
    };
    let mut r = rng::stream(0, "t", 0);
    let (x, t, l) = e2e_batch(&f.cfg, &f.samples, &f.train[..8], &mut r).unwrap();
    let (_, grads) = e2e_step(&f.cfg, &frozen, &mut state, x, t, &l).unwrap();
    let touched: Vec<&str> = grads
        .iter()
        .filter(|(_, g)| g.iter().any(|&v| v != 0.0))
        .map(|(id, _)| state.decoder.params.entry(*id).name.as_str())
        .collect();
    let weights = state
        .decoder
        .params
        .entries()
        .iter()
        .filter(|e| e.kind == ParamKind::Weight)
        .count();
    assert_eq!(touched.len(), weights);
    assert!(touched.iter().any(|n| n.starts_with("decoder.embedding")));
    assert_eq!(f.encoder.params, enc0);
    assert_eq!(f.trunk.params, trunk0);
    assert_ne!(state.decoder.params, dec0);
}

fn run(f: &Fixture, stop: Option<usize>, state: &mut TrainState) {
    let frozen = Frozen {
        encoder: &f.encoder,
        trunk: Some(&f.trunk),
        classifier: None,
    };
    train_end_to_end(&f.cfg, &f.samples, &f.train, &f.test, &frozen, state, stop).unwrap();
}

#[test]
fn identical_runs_produce_identical_histories() {
    let f = fixture();
    let mut a = TrainState::new(&f.cfg, 8).unwrap();
    let mut b = TrainState::new(&f.cfg, 8).unwrap();
    run(&f, None, &mut a);
    run(&f, None, &mut b);
    assert_eq!(a.history.len(), 4);
    assert_eq!(history_csv(&a.history), history_csv(&b.history));
    assert_eq!(a.decoder.params, b.decoder.params);
}

#[test]
fn resuming_from_a_checkpoint_matches_a_straight_run() {
    let f = fixture();
    let mut straight = TrainState::new(&f.cfg, 8).unwrap();
    run(&f, None, &mut straight);

    let mut first = TrainState::new(&f.cfg, 8).unwrap();
    run(&f, Some(2), &mut first);
    let bytes = first.to_checkpoint(&f.cfg, &f.encoder, 8).unwrap().to_bytes().unwrap();
    let ck = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(ck.to_bytes().unwrap(), bytes);
    let (cfg, mut resumed, encoder, classes) = TrainState::from_checkpoint(&ck).unwrap();
    assert_eq!((cfg, classes), (f.cfg.clone(), 8));
    assert_eq!(encoder.params, f.encoder.params);
    assert_eq!(resumed.epoch, 2);
    run(&f, None, &mut resumed);
    assert_eq!(history_csv(&resumed.history), history_csv(&straight.history));
    assert_eq!(resumed.decoder.params, straight.decoder.params);
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let f = fixture();
    let state = TrainState::new(&f.cfg, 8).unwrap();
    let bytes = state.to_checkpoint(&f.cfg, &f.encoder, 8).unwrap().to_bytes().unwrap();
    assert_eq!(&bytes[..4], MAGIC);
    let mut r = rng::stream(3, "corrupt", 0);
    for _ in 0..20 {
        let mut bad = bytes.clone();
        let i = r.gen_range(0..bad.len());
        bad[i] ^= 1 << r.gen_range(0..8);
        assert!(Checkpoint::from_bytes(&bad).is_err());
    }
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    assert!(Checkpoint::from_bytes(&[]).is_err());
}

#[test]
fn checkpoint_file_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut ck = Checkpoint::new(serde_json::json!({"b": 1, "a": [0.1, 2.5e-8]}));
    ck.push("x", vec![2, 2], vec![1.0, -0.0, f32::MIN_POSITIVE, 3.5]);
    let p = dir.path().join("c.skg");
    ck.save(&p).unwrap();
    let back = Checkpoint::load(&p).unwrap();
    assert_eq!(back, ck);
    let q = dir.path().join("d.skg");
    back.save(&q).unwrap();
    assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
}

#[test]
fn perceptual_training_without_a_trunk_is_refused() {
    let f = fixture();
    let mut state = TrainState::new(&f.cfg, 8).unwrap();
    let frozen = Frozen {
        encoder: &f.encoder,
        trunk: None,
        classifier: None,
    };
    assert!(train_end_to_end(&f.cfg, &f.samples, &f.train, &f.test, &frozen, &mut state, None).is_err());
    let mut mse = f.cfg.clone();
    mse.loss.kind = LossKind::Mse;
    let mut state = TrainState::new(&mse, 8).unwrap();
    train_end_to_end(&mse, &f.samples, &f.train, &f.test, &frozen, &mut state, Some(1)).unwrap();
    assert_eq!(state.history.len(), 1);
}
