//! Deterministic synthetic image/sketch dataset.

mod augment;
mod classes;
pub mod netpbm;
mod render;

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use augment::{
    adjust_brightness, adjust_contrast, adjust_saturation, augment_image, augment_sketch, flip_horizontal, warp,
    Affine, AugmentSpec, ImageJitter,
};
pub use classes::{class_shape, stroke_centroid, ClassShape, Stroke, CLASS_NAMES, MINOR_KEEP_RATE};
pub use render::{intensity_centroid, render_image, render_sketch, Canvas, Pose, GENERIC_POSE_RATE};

use crate::error::{invalid, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub seed: u64,
    pub num_classes: usize,
    pub images_per_class: usize,
    /// Minimum sketches per image; each image gets this many plus 0, 1 or 2.
    pub sketches_per_image: usize,
    pub size: usize,
    pub train_ratio: f64,
}

impl DataConfig {
    pub fn desk_scale() -> Self {
        Self {
            seed: 7,
            num_classes: 8,
            images_per_class: 80,
            sketches_per_image: 5,
            size: 32,
            train_ratio: 0.9,
        }
    }
}

/// One photo-like image with its class, pose and several sketches of it.
#[derive(Clone, Debug, PartialEq)]
pub struct SketchSample {
    pub id: usize,
    pub label: usize,
    pub pose: Pose,
    /// `[3, size, size]` in `[0, 1]`.
    pub image: Tensor<f32>,
    /// Each `[1, size, size]`, strokes 1 on background 0.
    pub sketches: Vec<Tensor<f32>>,
}

impl SketchSample {
    pub fn size(&self) -> usize {
        self.image.shape()[2]
    }
}

fn to_f32(v: Vec<f64>) -> Vec<f32> {
    v.into_iter().map(|x| x as f32).collect()
}

/// Renders one sample; depends only on `(seed, id)` and the counts.
pub fn generate_sample(cfg: &DataConfig, id: usize) -> Result<SketchSample> {
    let label = id % cfg.num_classes;
    let mut r = rng::stream(cfg.seed, "sample", id as u64);
    let pose = Pose::sample(cfg.size, &mut r);
    let k = cfg.sketches_per_image + [0, 1, 1, 2][r.gen_range(0..4)];
    let image = Tensor::new([3, cfg.size, cfg.size], to_f32(render_image(label, &pose, cfg.size, &mut r)))?;
    let sketches = (0..k)
        .map(|j| {
            let mut sr = rng::stream(cfg.seed, "sketcher", (id as u64) << 8 | j as u64);
            Tensor::new([1, cfg.size, cfg.size], to_f32(render_sketch(label, &pose, cfg.size, &mut sr)))
        })
        .collect::<Result<_>>()?;
    Ok(SketchSample {
        id,
        label,
        pose,
        image,
        sketches,
    })
}

pub fn validate(cfg: &DataConfig) -> Result<()> {
    if cfg.num_classes == 0 || cfg.num_classes > CLASS_NAMES.len() {
        return Err(invalid(
            "generate_dataset",
            format!("num_classes must be in 1..={}", CLASS_NAMES.len()),
        ));
    }
    if cfg.images_per_class == 0 || cfg.sketches_per_image == 0 {
        return Err(invalid("generate_dataset", "counts must be positive"));
    }
    if cfg.size < 8 || cfg.size > 4096 {
        return Err(invalid("generate_dataset", "size must be in 8..=4096"));
    }
    if !(cfg.train_ratio > 0.0 && cfg.train_ratio < 1.0) {
        return Err(invalid("generate_dataset", "train_ratio must lie in (0, 1)"));
    }
    Ok(())
}

/// Classes are interleaved: sample `id` has label `id % num_classes`.
pub fn generate_dataset(cfg: &DataConfig) -> Result<Vec<SketchSample>> {
    validate(cfg)?;
    (0..cfg.num_classes * cfg.images_per_class)
        .into_par_iter()
        .map(|id| generate_sample(cfg, id))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Image-level split, stratified by class. Ids refer to positions in
/// `labels`.
pub fn split_dataset(labels: &[usize], ratio: f64, seed: u64, tag: &str) -> Result<DatasetSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(invalid("split_dataset", "ratio must lie in (0, 1)"));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (&class, ids) in &by_class {
        if ids.len() < 2 {
            return Err(invalid("split_dataset", format!("class {class} has fewer than 2 images")));
        }
        let mut ids = ids.clone();
        ids.shuffle(&mut rng::stream(seed, tag, class as u64));
        let n_train = ((ids.len() as f64 * ratio).round() as usize).clamp(1, ids.len() - 1);
        train.extend_from_slice(&ids[..n_train]);
        test.extend_from_slice(&ids[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(DatasetSplit { train, test })
}

pub fn labels(samples: &[SketchSample]) -> Vec<usize> {
    samples.iter().map(|s| s.label).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: usize,
    pub label: usize,
    pub class: String,
    pub split: String,
    pub pose: Pose,
    pub image: String,
    pub sketches: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: DataConfig,
    pub classes: Vec<String>,
    pub samples: Vec<ManifestEntry>,
}

/// Writes one directory per class with P6 images and P5 sketches (dark
/// strokes on white), plus `manifest.json`.
pub fn export_dataset(cfg: &DataConfig, samples: &[SketchSample], dir: &Path) -> Result<Manifest> {
    let split = split_dataset(&labels(samples), cfg.train_ratio, cfg.seed, "split")?;
    let mut is_test = vec![false; samples.len()];
    for &i in &split.test {
        is_test[i] = true;
    }
    let classes: Vec<String> = CLASS_NAMES[..cfg.num_classes].iter().map(|s| s.to_string()).collect();
    for c in &classes {
        std::fs::create_dir_all(dir.join(c))?;
    }
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let class = &classes[s.label];
        let image = format!("{class}/{:05}.ppm", s.id);
        netpbm::write_file(&dir.join(&image), &netpbm::encode_ppm(cfg.size, cfg.size, s.image.data())?)?;
        let mut sketches = Vec::new();
        for (k, sk) in s.sketches.iter().enumerate() {
            let name = format!("{class}/{:05}_{k}.pgm", s.id);
            let inverted: Vec<f32> = sk.data().iter().map(|v| 1.0 - v).collect();
            netpbm::write_file(&dir.join(&name), &netpbm::encode_pgm(cfg.size, cfg.size, &inverted)?)?;
            sketches.push(name);
        }
        entries.push(ManifestEntry {
            id: s.id,
            label: s.label,
            class: class.clone(),
            split: if is_test[i] { "test" } else { "train" }.into(),
            pose: s.pose,
            image,
            sketches,
        });
    }
    let manifest = Manifest {
        config: cfg.clone(),
        classes,
        samples: entries,
    };
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    netpbm::write_file(&dir.join("manifest.json"), &json)?;
    Ok(manifest)
}

/// Reads a directory written by [`export_dataset`]. Values carry the 8-bit
/// quantization of the files; sketches are inverted back to strokes = 1.
pub fn load_dataset(dir: &Path) -> Result<(DataConfig, Vec<SketchSample>)> {
    let manifest: Manifest = serde_json::from_slice(&netpbm::read_file(&dir.join("manifest.json"))?)?;
    validate(&manifest.config)?;
    let size = manifest.config.size;
    let check = |w: usize, h: usize, name: &str| {
        if w == size && h == size {
            Ok(())
        } else {
            Err(crate::error::Error::Format(format!("{name} is {w}x{h}, expected {size}x{size}")))
        }
    };
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for e in &manifest.samples {
        let (w, h, img) = netpbm::decode_ppm(&netpbm::read_file(&dir.join(&e.image))?)?;
        check(w, h, &e.image)?;
        let mut sketches = Vec::with_capacity(e.sketches.len());
        for name in &e.sketches {
            let (w, h, px) = netpbm::decode_pgm(&netpbm::read_file(&dir.join(name))?)?;
            check(w, h, name)?;
            sketches.push(Tensor::new([1, size, size], px.into_iter().map(|v| 1.0 - v).collect())?);
        }
        if e.label >= manifest.config.num_classes {
            return Err(invalid("load_dataset", format!("label {} out of range", e.label)));
        }
        samples.push(SketchSample {
            id: e.id,
            label: e.label,
            pose: e.pose,
            image: Tensor::new([3, size, size], img)?,
            sketches,
        });
    }
    Ok((manifest.config, samples))
}
