use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::classes::{class_shape, ellipse, stroke_segments, Pt, Stroke};
use crate::rng::Rng;

/// Placement of the object: centre in pixels, half-extent in pixels,
/// rotation in degrees, and whether the shape is mirrored left-right.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub cx: f64,
    pub cy: f64,
    pub scale: f64,
    pub rotation: f64,
    pub mirrored: bool,
}

impl Pose {
    pub fn sample(size: usize, rng: &mut Rng) -> Self {
        let s = size as f64;
        Self {
            cx: s / 2.0 + rng.gen_range(-0.08..=0.08) * s,
            cy: s / 2.0 + rng.gen_range(-0.08..=0.08) * s,
            scale: rng.gen_range(0.30..=0.38) * s,
            rotation: rng.gen_range(-12.0..=12.0),
            mirrored: rng.gen_bool(0.5),
        }
    }

    pub fn apply(&self, p: Pt) -> Pt {
        let x = if self.mirrored { -p.0 } else { p.0 };
        let (sin, cos) = self.rotation.to_radians().sin_cos();
        let (rx, ry) = (x * cos - p.1 * sin, x * sin + p.1 * cos);
        (self.cx + self.scale * rx, self.cy + self.scale * ry)
    }
}

/// Single-channel raster, row-major, pixel centres at `(x + 0.5, y + 0.5)`.
#[derive(Clone, Debug)]
pub struct Canvas {
    pub size: usize,
    pub data: Vec<f64>,
}

impl Canvas {
    pub fn new(size: usize, value: f64) -> Self {
        Self {
            size,
            data: vec![value; size * size],
        }
    }

    /// Anti-aliased line: coverage falls off linearly over one pixel.
    pub fn segment_max(&mut self, a: Pt, b: Pt, width: f64, value: f64) {
        let r = width / 2.0 + 0.5;
        let lo = |u: f64, v: f64| ((u.min(v) - r).floor().max(0.0)) as usize;
        let hi = |u: f64, v: f64| ((u.max(v) + r).ceil().max(0.0) as usize).min(self.size);
        let (x0, x1, y0, y1) = (lo(a.0, b.0), hi(a.0, b.0), lo(a.1, b.1), hi(a.1, b.1));
        for y in y0..y1 {
            for x in x0..x1 {
                let d = point_segment_distance((x as f64 + 0.5, y as f64 + 0.5), a, b);
                let cov = (width / 2.0 + 0.5 - d).clamp(0.0, 1.0) * value;
                let px = &mut self.data[y * self.size + x];
                if cov > *px {
                    *px = cov;
                }
            }
        }
    }
}

fn point_segment_distance(p: Pt, a: Pt, b: Pt) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((p.0 - a.0 - t * dx).powi(2) + (p.1 - a.1 - t * dy).powi(2)).sqrt()
}

fn inside(p: Pt, poly: &[Pt]) -> bool {
    let mut c = false;
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + n - 1) % n]);
        if (a.1 > p.1) != (b.1 > p.1) && p.0 < (b.0 - a.0) * (p.1 - a.1) / (b.1 - a.1) + a.0 {
            c = !c;
        }
    }
    c
}

/// Fraction of each pixel covered by the polygon (4x4 supersampling).
fn polygon_coverage(size: usize, poly: &[Pt]) -> Vec<f64> {
    let mut out = vec![0.0; size * size];
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in poly {
        x0 = x0.min(p.0);
        x1 = x1.max(p.0);
        y0 = y0.min(p.1);
        y1 = y1.max(p.1);
    }
    let clampi = |v: f64| (v.max(0.0) as usize).min(size);
    for y in clampi(y0.floor())..clampi(y1.ceil() + 1.0) {
        for x in clampi(x0.floor())..clampi(x1.ceil() + 1.0) {
            let mut hits = 0;
            for sy in 0..4 {
                for sx in 0..4 {
                    let p = (x as f64 + (sx as f64 + 0.5) / 4.0, y as f64 + (sy as f64 + 0.5) / 4.0);
                    hits += inside(p, poly) as usize;
                }
            }
            out[y * size + x] = hits as f64 / 16.0;
        }
    }
    out
}

fn transform(stroke: &Stroke, pose: &Pose) -> Vec<Pt> {
    stroke.points.iter().map(|&p| pose.apply(p)).collect()
}

fn luminance(c: [f64; 3]) -> f64 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

/// Photo-like RGB rendering `[3, size, size]` of the object over a
/// cluttered background.
pub fn render_image(class: usize, pose: &Pose, size: usize, rng: &mut Rng) -> Vec<f64> {
    let plane = size * size;
    let mut img = vec![0.0; 3 * plane];
    let bg: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.25..0.75));
    let waves: Vec<(f64, f64, f64, [f64; 3])> = (0..3)
        .map(|_| {
            (
                rng.gen_range(0.05..0.3),
                rng.gen_range(0.05..0.3),
                rng.gen_range(0.0..std::f64::consts::TAU),
                std::array::from_fn(|_| rng.gen_range(-0.06..0.06)),
            )
        })
        .collect();
    for y in 0..size {
        for x in 0..size {
            for c in 0..3 {
                let mut v = bg[c];
                for (fx, fy, ph, amp) in &waves {
                    v += amp[c] * (fx * x as f64 + fy * y as f64 + ph).sin();
                }
                img[c * plane + y * size + x] = v + rng.gen_range(-0.03..0.03);
            }
        }
    }
    let blend = |img: &mut Vec<f64>, cov: &[f64], color: [f64; 3], alpha: f64| {
        for (i, &k) in cov.iter().enumerate() {
            let a = k * alpha;
            for c in 0..3 {
                let px = &mut img[c * plane + i];
                *px = (1.0 - a) * *px + a * color[c];
            }
        }
    };
    for _ in 0..rng.gen_range(2..=4) {
        let color: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..1.0));
        let s = size as f64;
        let blob = ellipse(
            rng.gen_range(0.0..s),
            rng.gen_range(0.0..s),
            rng.gen_range(0.08..0.2) * s,
            rng.gen_range(0.08..0.2) * s,
            16,
        );
        let cov = polygon_coverage(size, &blob);
        blend(&mut img, &cov, color, 0.8);
    }

    let mut color: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..1.0));
    let gap = luminance(color) - luminance(bg);
    if gap.abs() < 0.25 {
        let push = if luminance(bg) > 0.5 { -0.35 } else { 0.35 };
        color = color.map(|c| (c + push).clamp(0.0, 1.0));
    }
    let shape = class_shape(class);
    for s in shape.strokes.iter().filter(|s| s.filled) {
        let part = rng.gen_range(0.8..1.2);
        let cov = polygon_coverage(size, &transform(s, pose));
        blend(&mut img, &cov, color.map(|c| (c * part).clamp(0.0, 1.0)), 1.0);
    }
    let dark = color.map(|c| c * 0.35);
    for s in shape.strokes.iter().filter(|s| !s.filled) {
        let mut cv = Canvas::new(size, 0.0);
        for (a, b) in stroke_segments(s) {
            cv.segment_max(pose.apply(a), pose.apply(b), 1.0, 1.0);
        }
        blend(&mut img, &cv.data, dark, if s.minor { 0.6 } else { 0.9 });
    }
    for v in &mut img {
        *v = (*v + rng.gen_range(-0.02..0.02)).clamp(0.0, 1.0);
    }
    img
}

pub const GENERIC_POSE_RATE: f64 = 0.25;

/// One sketcher's line drawing `[size, size]`: strokes 1 on background 0.
/// Each sketcher misplaces the object slightly, wobbles the lines and uses
/// their own pen width. Sketchers work at one of three abstraction levels
/// (more skipped detail and looser lines as the level rises), and some
/// straighten the object upright while keeping the way it faces.
pub fn render_sketch(class: usize, pose: &Pose, size: usize, rng: &mut Rng) -> Vec<f64> {
    let shift = 0.015 * size as f64;
    let generic = rng.gen_bool(GENERIC_POSE_RATE);
    let jittered = Pose {
        cx: pose.cx + rng.gen_range(-shift..=shift),
        cy: pose.cy + rng.gen_range(-shift..=shift),
        scale: pose.scale * rng.gen_range(0.94..=1.06),
        rotation: if generic { 0.0 } else { pose.rotation } + rng.gen_range(-5.0..=5.0),
        mirrored: pose.mirrored,
    };
    let width = rng.gen_range(0.9..=1.5);
    let level = rng.gen_range(0..3u8);
    let skip_minor = match level {
        0 => false,
        1 => rng.gen_bool(0.5),
        _ => true,
    };
    let wobble = Normal::new(0.0, 0.03 * (1.0 + 0.5 * level as f64)).expect("valid sigma");
    let mut cv = Canvas::new(size, 0.0);
    for s in &class_shape(class).strokes {
        let dropped = s.minor && (skip_minor || rng.gen_bool(0.3));
        // Draw the same amount of randomness either way so sketchers stay
        // independent of which strokes they skip.
        let segs = stroke_segments(s);
        let mut pts = Vec::new();
        for (a, b) in &segs {
            let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
            let pieces = (len / 0.25).ceil().max(1.0) as usize;
            for i in 0..pieces {
                let t = i as f64 / pieces as f64;
                pts.push((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)));
            }
        }
        if let (false, Some(last)) = (s.closed, segs.last()) {
            pts.push(last.1);
        }
        let pts: Vec<Pt> = pts
            .into_iter()
            .map(|p| (p.0 + wobble.sample(rng), p.1 + wobble.sample(rng)))
            .collect();
        if dropped {
            continue;
        }
        let n = pts.len();
        let count = if s.closed { n } else { n.saturating_sub(1) };
        for i in 0..count {
            cv.segment_max(jittered.apply(pts[i]), jittered.apply(pts[(i + 1) % n]), width, 1.0);
        }
    }
    cv.data
}

/// Intensity-weighted centroid `(x, y)` of a single-channel raster.
pub fn intensity_centroid(data: &[f32], size: usize) -> Option<(f64, f64)> {
    let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
    for y in 0..size {
        for x in 0..size {
            let v = data[y * size + x] as f64;
            sx += v * (x as f64 + 0.5);
            sy += v * (y as f64 + 0.5);
            sw += v;
        }
    }
    (sw > 0.0).then(|| (sx / sw, sy / sw))
}
