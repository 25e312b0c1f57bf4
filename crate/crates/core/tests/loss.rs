mod common;

use proptest::prelude::*;
use rand::Rng;
use sketchgen::loss::{self, psim, psim_per_sample, LossKind};
use sketchgen::models::{FeatureStack, TrunkConfig};
use sketchgen::{Tape, Tensor};

fn trunk(seed: u64) -> FeatureStack<f64> {
    FeatureStack::build(&TrunkConfig::desk_scale(), seed).unwrap()
}

fn sketches(n: usize, seed: u64) -> Tensor<f64> {
    let mut r = common::rng(seed);
    Tensor::from_fn([n, 1, 32, 32], |_| if r.gen_bool(0.2) { r.gen_range(0.5..1.0) } else { 0.0 })
}

fn distances(trunk: &FeatureStack<f64>, a: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let mut tape = Tape::new();
    let (x, y) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let d = psim_per_sample(&mut tape, trunk, x, y).unwrap();
    tape.value(d).data().to_vec()
}

fn single(img: &[f64]) -> Tensor<f64> {
    Tensor::new([1, 1, 32, 32], img.to_vec()).unwrap()
}

#[test]
fn identical_inputs_are_at_distance_zero() {
    let t = trunk(1);
    let x = sketches(4, 2);
    assert!(distances(&t, &x, &x).iter().all(|&d| d == 0.0));
    let blank = Tensor::zeros([1, 1, 32, 32]);
    assert_eq!(distances(&t, &blank, &blank), vec![0.0]);
}

#[test]
fn batch_loss_is_mean_of_per_sample_distances() {
    let t = trunk(3);
    let (a, b) = (sketches(3, 4), sketches(3, 5));
    let per = distances(&t, &a, &b);
    let mut tape = Tape::new();
    let (x, y) = (tape.constant(a), tape.constant(b));
    let l = psim(&mut tape, &t, x, y).unwrap();
    let want = per.iter().sum::<f64>() / 3.0;
    assert!((tape.value(l).item() - want).abs() < 1e-12);
}

#[test]
fn pixel_loss_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros([2, 1, 4, 4]));
    let y = tape.constant(Tensor::full([2, 1, 4, 4], 1.0));
    let l = loss::mse(&mut tape, x, y).unwrap();
    assert_eq!(tape.value(l).item(), 1.0);
    let h = tape.constant(Tensor::full([2, 1, 4, 4], 0.5));
    let l = loss::loss(&mut tape, LossKind::Mse, None, x, h).unwrap();
    assert_eq!(tape.value(l).item(), 0.25);
}

#[test]
fn perceptual_loss_requires_a_trunk_and_matching_shapes() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros([1, 1, 32, 32]));
    assert!(loss::loss(&mut tape, LossKind::Psim, None, x, x).is_err());
    let y = tape.constant(Tensor::zeros([2, 1, 32, 32]));
    assert!(psim(&mut tape, &trunk(0), x, y).is_err());
}

#[test]
fn checkerboard_alternatives_tie_under_pixel_distance() {
    let mut r = common::rng(77);
    for _ in 0..20 {
        let c = common::checkerboard(32, &mut r);
        let a = common::pixel_mse(&c.original, &c.shifted);
        let b = common::pixel_mse(&c.original, &c.inverted);
        assert!(a > 0.0);
        assert_eq!(a, b);
    }
}

#[test]
fn distance_grows_with_disagreement() {
    let t = trunk(9);
    let mut r = common::rng(10);
    let c = common::checkerboard(32, &mut r);
    let d = distances(&t, &single(&c.original), &single(&c.inverted))[0];
    assert!(d > 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn symmetric_and_bounded(seed in 0u64..10_000) {
        let t = trunk(seed % 3);
        let (a, b) = (sketches(2, seed), sketches(2, seed + 1));
        let ab = distances(&t, &a, &b);
        let ba = distances(&t, &b, &a);
        let bound = 4.0 * t.depth() as f64;
        for (x, y) in ab.iter().zip(&ba) {
            prop_assert!((x - y).abs() < 1e-6);
            prop_assert!(*x >= 0.0 && *x <= bound);
        }
    }

    #[test]
    fn invariant_to_positive_rescaling_of_features(seed in 0u64..10_000, s in 0.5f64..2.0) {
        // The first layer has zero bias, so scaling the input scales its
        // activations and leaves their directions unchanged.
        let t = trunk(1);
        let a = sketches(1, seed);
        let scaled = Tensor::from_fn([1, 1, 32, 32], |i| a.data()[i] * s);
        let mut tape = Tape::new();
        let (x, y) = (tape.constant(a.clone()), tape.constant(scaled));
        let fx = t.features(&mut tape, x).unwrap();
        let fy = t.features(&mut tape, y).unwrap();
        let d = loss::feature_distance(&mut tape, &fx[..1], &fy[..1]).unwrap();
        prop_assert!(tape.value(d).item() < 1e-12);
    }
}
