use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

/// Random affine regime for sketches. Every parameter is drawn uniformly
/// from `[-range, range]`; translation is a fraction of the image width.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSpec {
    pub flip: bool,
    pub rotation_deg: f64,
    pub translate_frac: f64,
    pub scale: f64,
    pub shear_deg: f64,
}

impl AugmentSpec {
    pub fn sketch_default() -> Self {
        Self {
            flip: true,
            rotation_deg: 10.0,
            translate_frac: 18.0 / 224.0,
            scale: 0.10,
            shear_deg: 10.0,
        }
    }

    pub fn identity() -> Self {
        Self {
            flip: false,
            rotation_deg: 0.0,
            translate_frac: 0.0,
            scale: 0.0,
            shear_deg: 0.0,
        }
    }
}

/// Concrete affine parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine {
    pub flip: bool,
    pub rotation_deg: f64,
    pub tx: f64,
    pub ty: f64,
    pub scale: f64,
    pub shear_deg: f64,
}

impl Affine {
    pub fn identity() -> Self {
        Self {
            flip: false,
            rotation_deg: 0.0,
            tx: 0.0,
            ty: 0.0,
            scale: 1.0,
            shear_deg: 0.0,
        }
    }

    /// Always consumes the same number of draws whatever the spec.
    pub fn sample(spec: &AugmentSpec, size: usize, rng: &mut Rng) -> Self {
        let coin = rng.gen_bool(0.5);
        let mut u = |r: f64| rng.gen_range(-r.abs()..=r.abs());
        let t = spec.translate_frac * size as f64;
        Self {
            flip: spec.flip && coin,
            rotation_deg: u(spec.rotation_deg),
            tx: u(t),
            ty: u(t),
            scale: 1.0 + u(spec.scale),
            shear_deg: u(spec.shear_deg),
        }
    }

    /// Linear part `R(rotation) * Shear_x * Scale * Flip` as a row-major 2x2.
    fn matrix(&self) -> [f64; 4] {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let k = self.shear_deg.to_radians().tan();
        let f = if self.flip { -1.0 } else { 1.0 };
        // shear * scale * flip = [[f*sc, k*sc], [0, sc]]
        let sc = self.scale;
        let m = [f * sc, k * sc, 0.0, sc];
        [c * m[0] - s * m[2], c * m[1] - s * m[3], s * m[0] + c * m[2], s * m[1] + c * m[3]]
    }
}

fn bilinear(src: &[f64], size: usize, x: f64, y: f64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let at = |xi: f64, yi: f64| {
        if xi < 0.0 || yi < 0.0 || xi >= size as f64 || yi >= size as f64 {
            0.0
        } else {
            src[yi as usize * size + xi as usize]
        }
    };
    (1.0 - fy) * ((1.0 - fx) * at(x0, y0) + fx * at(x0 + 1.0, y0)) + fy * ((1.0 - fx) * at(x0, y0 + 1.0) + fx * at(x0 + 1.0, y0 + 1.0))
}

/// Warps a square single-channel raster about its centre with bilinear
/// resampling; pixels mapped from outside become 0.
pub fn warp(src: &[f64], size: usize, a: &Affine) -> Vec<f64> {
    if *a == Affine::identity() {
        return src.to_vec();
    }
    let m = a.matrix();
    let det = m[0] * m[3] - m[1] * m[2];
    let inv = [m[3] / det, -m[1] / det, -m[2] / det, m[0] / det];
    let c = size as f64 / 2.0;
    let mut out = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64 + 0.5 - c - a.tx, y as f64 + 0.5 - c - a.ty);
            let sx = inv[0] * px + inv[1] * py + c - 0.5;
            let sy = inv[2] * px + inv[3] * py + c - 0.5;
            out[y * size + x] = bilinear(src, size, sx, sy).clamp(0.0, 1.0);
        }
    }
    out
}

pub fn augment_sketch(sketch: &[f64], size: usize, spec: &AugmentSpec, rng: &mut Rng) -> Vec<f64> {
    warp(sketch, size, &Affine::sample(spec, size, rng))
}

/// Mirrors every channel plane left-right.
pub fn flip_horizontal(data: &mut [f64], size: usize) {
    for row in data.chunks_mut(size) {
        row.reverse();
    }
}

/// Photometric jitter for RGB images; factors drawn from `[1 - r, 1 + r]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageJitter {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
}

impl ImageJitter {
    pub fn default_ten_percent() -> Self {
        Self {
            brightness: 0.1,
            contrast: 0.1,
            saturation: 0.1,
        }
    }
}

pub fn adjust_brightness(img: &mut [f64], factor: f64) {
    for v in img {
        *v *= factor;
    }
}

/// Blend with the image's mean grey level.
pub fn adjust_contrast(img: &mut [f64], factor: f64) {
    let plane = img.len() / 3;
    let mean = (0..plane).map(|i| gray(img, plane, i)).sum::<f64>() / plane as f64;
    for v in img {
        *v = mean + factor * (*v - mean);
    }
}

/// Blend with the per-pixel grey value.
pub fn adjust_saturation(img: &mut [f64], factor: f64) {
    let plane = img.len() / 3;
    for i in 0..plane {
        let g = gray(img, plane, i);
        for c in 0..3 {
            let v = &mut img[c * plane + i];
            *v = g + factor * (*v - g);
        }
    }
}

fn gray(img: &[f64], plane: usize, i: usize) -> f64 {
    0.299 * img[i] + 0.587 * img[plane + i] + 0.114 * img[2 * plane + i]
}

/// Colour jitter on a `[3, size, size]` image, plus an optional left-right
/// flip whose outcome is returned so the target can follow. The coin is
/// drawn even when flipping is disabled.
pub fn augment_image(img: &[f64], size: usize, jitter: &ImageJitter, flip: bool, rng: &mut Rng) -> (Vec<f64>, bool) {
    let coin = rng.gen_bool(0.5);
    let mut u = |r: f64| rng.gen_range(1.0 - r.abs()..=1.0 + r.abs());
    let (b, c, s) = (u(jitter.brightness), u(jitter.contrast), u(jitter.saturation));
    let mut out = img.to_vec();
    adjust_brightness(&mut out, b);
    adjust_contrast(&mut out, c);
    adjust_saturation(&mut out, s);
    for v in &mut out {
        *v = v.clamp(0.0, 1.0);
    }
    let flipped = flip && coin;
    if flipped {
        flip_horizontal(&mut out, size);
    }
    (out, flipped)
}
