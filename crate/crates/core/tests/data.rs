use proptest::prelude::*;
use rand::Rng;
use sketchgen::data::netpbm::{decode_pgm, decode_ppm, encode_pgm, encode_ppm};
use sketchgen::data::*;
use sketchgen::rng;

fn small() -> DataConfig {
    DataConfig {
        images_per_class: 4,
        ..DataConfig::desk_scale()
    }
}

#[test]
fn generation_is_a_pure_function_of_the_config() {
    let a = generate_dataset(&small()).unwrap();
    let b = generate_dataset(&small()).unwrap();
    assert_eq!(a, b);
    let serial: Vec<_> = (0..a.len()).map(|i| generate_sample(&small(), i).unwrap()).collect();
    assert_eq!(a, serial);
    let other = generate_dataset(&DataConfig { seed: 8, ..small() }).unwrap();
    assert_ne!(a[0].image, other[0].image);
}

#[test]
fn samples_have_expected_shape_labels_and_range() {
    let cfg = small();
    let data = generate_dataset(&cfg).unwrap();
    assert_eq!(data.len(), 32);
    for (i, s) in data.iter().enumerate() {
        assert_eq!(s.id, i);
        assert_eq!(s.label, i % 8);
        assert_eq!(s.image.shape(), &[3, 32, 32]);
        assert!(s.sketches.len() >= cfg.sketches_per_image && s.sketches.len() <= cfg.sketches_per_image + 2);
        for k in &s.sketches {
            assert_eq!(k.shape(), &[1, 32, 32]);
            assert!(k.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(k.data().iter().any(|&v| v > 0.5));
        }
        assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    let mean = data.iter().map(|s| s.sketches.len()).sum::<usize>() as f64 / data.len() as f64;
    assert!(mean > 5.0 && mean < 7.0, "{mean}");
}

#[test]
fn sketches_of_one_image_differ() {
    let s = generate_sample(&small(), 3).unwrap();
    for (i, a) in s.sketches.iter().enumerate() {
        for b in &s.sketches[i + 1..] {
            assert_ne!(a, b);
        }
    }
}

#[test]
fn recorded_pose_matches_stroke_centroid() {
    let cfg = DataConfig {
        images_per_class: 10,
        ..DataConfig::desk_scale()
    };
    for s in generate_dataset(&cfg).unwrap() {
        for k in &s.sketches {
            let (x, y) = intensity_centroid(k.data(), 32).unwrap();
            let d = ((x - s.pose.cx).powi(2) + (y - s.pose.cy).powi(2)).sqrt();
            assert!(d < 2.0, "sample {} off by {d}", s.id);
        }
    }
}

#[test]
fn invalid_counts_are_rejected() {
    for cfg in [
        DataConfig { num_classes: 0, ..small() },
        DataConfig { num_classes: 99, ..small() },
        DataConfig { images_per_class: 0, ..small() },
        DataConfig { sketches_per_image: 0, ..small() },
        DataConfig { train_ratio: 1.0, ..small() },
    ] {
        assert!(generate_dataset(&cfg).is_err());
    }
}

#[test]
fn split_examples() {
    let labels = vec![0; 10];
    let s = split_dataset(&labels, 0.9, 1, "t").unwrap();
    assert_eq!((s.train.len(), s.test.len()), (9, 1));
    assert!(split_dataset(&[0, 1, 1], 0.5, 1, "t").is_err());
    assert!(split_dataset(&labels, 0.0, 1, "t").is_err());
    assert_eq!(split_dataset(&labels, 0.9, 1, "t").unwrap(), s);
}

proptest! {
    #[test]
    fn split_is_disjoint_complete_and_stratified(
        classes in 1usize..6, per in 2usize..30, ratio in 0.05f64..0.95, seed in 0u64..1000,
    ) {
        let labels: Vec<usize> = (0..classes * per).map(|i| i % classes).collect();
        let s = split_dataset(&labels, ratio, seed, "p").unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        for c in 0..classes {
            let n = s.train.iter().filter(|&&i| labels[i] == c).count() as f64;
            prop_assert!((n - ratio * per as f64).abs() <= 1.0);
        }
    }

    #[test]
    fn augmentations_preserve_shape_and_range(seed in 0u64..1000) {
        let s = generate_sample(&small(), (seed % 32) as usize).unwrap();
        let mut r = rng::stream(seed, "prop", 0);
        let sk: Vec<f64> = s.sketches[0].data().iter().map(|&v| v as f64).collect();
        let out = augment_sketch(&sk, 32, &AugmentSpec::sketch_default(), &mut r);
        prop_assert_eq!(out.len(), sk.len());
        prop_assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
        let img: Vec<f64> = s.image.data().iter().map(|&v| v as f64).collect();
        let (out, _) = augment_image(&img, 32, &ImageJitter::default_ten_percent(), true, &mut r);
        prop_assert_eq!(out.len(), img.len());
        prop_assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn flip_is_an_involution(seed in 0u64..1000) {
        let mut r = rng::stream(seed, "flip", 0);
        let orig: Vec<f64> = (0..3 * 64).map(|_| r.gen::<f64>()).collect();
        let mut x = orig.clone();
        flip_horizontal(&mut x, 8);
        flip_horizontal(&mut x, 8);
        prop_assert_eq!(x, orig);
    }
}

#[test]
fn zero_ranges_leave_sketches_unchanged() {
    let s = generate_sample(&small(), 5).unwrap();
    let sk: Vec<f64> = s.sketches[0].data().iter().map(|&v| v as f64).collect();
    let mut r = rng::stream(1, "id", 0);
    for _ in 0..10 {
        let out = augment_sketch(&sk, 32, &AugmentSpec::identity(), &mut r);
        let d = out.iter().zip(&sk).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(d < 1e-6);
    }
}

#[test]
fn warped_flip_twice_is_identity() {
    let s = generate_sample(&small(), 6).unwrap();
    let sk: Vec<f64> = s.sketches[0].data().iter().map(|&v| v as f64).collect();
    let flip = Affine {
        flip: true,
        ..Affine::identity()
    };
    let twice = warp(&warp(&sk, 32, &flip), 32, &flip);
    let d = twice.iter().zip(&sk).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(d < 1e-6);
}

#[test]
fn rotating_a_centred_disk_back_and_forth_preserves_it() {
    let n = 32;
    let disk: Vec<f64> = (0..n * n)
        .map(|i| {
            let (x, y) = ((i % n) as f64 + 0.5 - 16.0, (i / n) as f64 + 0.5 - 16.0);
            (8.0 - (x * x + y * y).sqrt()).clamp(0.0, 1.0)
        })
        .collect();
    let rot = |deg| Affine {
        rotation_deg: deg,
        ..Affine::identity()
    };
    let back = warp(&warp(&disk, n, &rot(10.0)), n, &rot(-10.0));
    let mad = back.iter().zip(&disk).map(|(a, b)| (a - b).abs()).sum::<f64>() / disk.len() as f64;
    assert!(mad < 0.02, "{mad}");
}

#[test]
fn colour_jitter_examples() {
    let s = generate_sample(&small(), 2).unwrap();
    let img: Vec<f64> = s.image.data().iter().map(|&v| v as f64).collect();
    let mut x = img.clone();
    adjust_brightness(&mut x, 1.0);
    adjust_contrast(&mut x, 1.0);
    adjust_saturation(&mut x, 1.0);
    let d = x.iter().zip(&img).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(d < 1e-12);

    let grey: Vec<f64> = (0..3).flat_map(|_| (0..64).map(|i| i as f64 / 64.0)).collect();
    let mut g = grey.clone();
    adjust_saturation(&mut g, 1.1);
    let d = g.iter().zip(&grey).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(d < 1e-12);

    let mut r = rng::stream(4, "jit", 0);
    for _ in 0..100 {
        let (out, _) = augment_image(&img, 32, &ImageJitter::default_ten_percent(), true, &mut r);
        assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn netpbm_round_trip() {
    let s = generate_sample(&small(), 1).unwrap();
    let ppm = encode_ppm(32, 32, s.image.data()).unwrap();
    assert!(ppm.starts_with(b"P6\n32 32\n255\n"));
    let (w, h, back) = decode_ppm(&ppm).unwrap();
    assert_eq!((w, h), (32, 32));
    let d = back.iter().zip(s.image.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
    assert!(d <= 0.5 / 255.0 + 1e-6);

    let pgm = encode_pgm(32, 32, s.sketches[0].data()).unwrap();
    assert!(pgm.starts_with(b"P5\n32 32\n255\n"));
    let (_, _, back) = decode_pgm(&pgm).unwrap();
    let d = back.iter().zip(s.sketches[0].data()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
    assert!(d <= 0.5 / 255.0 + 1e-6);
    assert!(decode_pgm(b"P6\n1 1\n255\n\0\0\0").is_err());
    assert!(decode_pgm(b"P5\n2 2\n255\n\0").is_err());
}

#[test]
fn export_writes_inverted_sketches_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = DataConfig {
        images_per_class: 2,
        ..DataConfig::desk_scale()
    };
    let data = generate_dataset(&cfg).unwrap();
    let m = export_dataset(&cfg, &data, dir.path()).unwrap();
    assert_eq!(m.samples.len(), data.len());
    let e = &m.samples[0];
    let bytes = std::fs::read(dir.path().join(&e.sketches[0])).unwrap();
    let (_, _, px) = decode_pgm(&bytes).unwrap();
    for (a, b) in px.iter().zip(data[0].sketches[0].data()) {
        assert!((a - (1.0 - b)).abs() <= 0.5 / 255.0 + 1e-6);
    }
    assert!(dir.path().join("manifest.json").exists());
    let again = tempfile::tempdir().unwrap();
    export_dataset(&cfg, &data, again.path()).unwrap();
    assert_eq!(
        std::fs::read(dir.path().join("manifest.json")).unwrap(),
        std::fs::read(again.path().join("manifest.json")).unwrap()
    );
}
