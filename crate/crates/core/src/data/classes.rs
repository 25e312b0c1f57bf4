//! Parametric object classes. Coordinates are object-local, y pointing down,
//! roughly within [-1, 1].

pub type Pt = (f64, f64);

#[derive(Clone, Debug)]
pub struct Stroke {
    pub points: Vec<Pt>,
    pub closed: bool,
    /// Filled in the photo-like rendering.
    pub filled: bool,
    /// Small detail a sketcher may leave out.
    pub minor: bool,
}

#[derive(Clone, Debug)]
pub struct ClassShape {
    pub name: &'static str,
    pub strokes: Vec<Stroke>,
}

pub const CLASS_NAMES: [&str; 8] = ["mug", "boat", "house", "fish", "tree", "star", "arrow", "bird"];

fn poly(points: &[Pt]) -> Stroke {
    Stroke {
        points: points.to_vec(),
        closed: true,
        filled: true,
        minor: false,
    }
}

fn line(points: &[Pt], minor: bool) -> Stroke {
    Stroke {
        points: points.to_vec(),
        closed: false,
        filled: false,
        minor,
    }
}

fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<Pt> {
    vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
}

pub(crate) fn ellipse(cx: f64, cy: f64, rx: f64, ry: f64, n: usize) -> Vec<Pt> {
    (0..n)
        .map(|i| {
            let t = std::f64::consts::TAU * i as f64 / n as f64;
            (cx + rx * t.cos(), cy + ry * t.sin())
        })
        .collect()
}

fn arc(cx: f64, cy: f64, rx: f64, ry: f64, from: f64, to: f64, n: usize) -> Vec<Pt> {
    (0..=n)
        .map(|i| {
            let t = (from + (to - from) * i as f64 / n as f64).to_radians();
            (cx + rx * t.cos(), cy + ry * t.sin())
        })
        .collect()
}

fn raw_shape(name: &'static str) -> Vec<Stroke> {
    match name {
        "mug" => vec![
            poly(&rect(-0.65, -0.7, 0.35, 0.8)),
            line(&arc(0.35, 0.05, 0.5, 0.4, -90.0, 90.0, 8), false),
            line(&[(-0.65, -0.45), (0.35, -0.45)], true),
        ],
        "boat" => vec![
            poly(&[(-1.0, 0.3), (1.0, 0.3), (0.6, 0.8), (-0.6, 0.8)]),
            line(&[(0.0, 0.3), (0.0, -0.95)], false),
            poly(&[(0.08, -0.85), (0.08, 0.15), (0.75, 0.15)]),
            line(&[(-0.08, -0.6), (-0.6, 0.15), (-0.08, 0.15)], true),
        ],
        "house" => vec![
            poly(&rect(-0.7, -0.1, 0.7, 0.9)),
            poly(&[(-0.9, -0.1), (0.0, -0.95), (0.9, -0.1)]),
            line(&[(-0.15, 0.9), (-0.15, 0.4), (0.15, 0.4), (0.15, 0.9)], true),
            line(&rect(0.3, 0.1, 0.55, 0.35).into_iter().chain([(0.3, 0.1)]).collect::<Vec<_>>(), true),
        ],
        "fish" => vec![
            poly(&ellipse(-0.15, 0.0, 0.7, 0.42, 16)),
            poly(&[(0.5, 0.0), (1.0, -0.5), (1.0, 0.5)]),
            line(&ellipse(-0.55, -0.1, 0.08, 0.08, 6).into_iter().chain([(-0.47, -0.1)]).collect::<Vec<_>>(), true),
            line(&[(-0.2, -0.4), (0.0, -0.7), (0.3, -0.35)], true),
        ],
        "tree" => vec![
            poly(&rect(-0.15, 0.3, 0.15, 0.95)),
            poly(&ellipse(0.0, -0.3, 0.7, 0.65, 16)),
            line(&[(0.0, 0.55), (0.3, 0.2)], true),
        ],
        "star" => vec![poly(
            &(0..10)
                .map(|i| {
                    let r = if i % 2 == 0 { 0.98 } else { 0.4 };
                    let t = (-90.0 + 36.0 * i as f64).to_radians();
                    (r * t.cos(), r * t.sin())
                })
                .collect::<Vec<_>>(),
        )],
        "arrow" => vec![
            poly(&[
                (-0.95, -0.15),
                (0.25, -0.15),
                (0.25, -0.5),
                (0.95, 0.0),
                (0.25, 0.5),
                (0.25, 0.15),
                (-0.95, 0.15),
            ]),
            line(&[(-0.95, -0.15), (-1.0, -0.4)], true),
            line(&[(-0.95, 0.15), (-1.0, 0.4)], true),
        ],
        "bird" => vec![
            poly(&ellipse(-0.1, 0.1, 0.6, 0.35, 16)),
            poly(&ellipse(0.55, -0.3, 0.25, 0.25, 10)),
            poly(&[(0.78, -0.38), (1.0, -0.3), (0.78, -0.22)]),
            line(&[(-0.4, 0.0), (-0.05, -0.5), (0.2, 0.0)], false),
            line(&[(-0.1, 0.45), (-0.1, 0.8)], true),
            line(&[(0.1, 0.45), (0.1, 0.8)], true),
        ],
        _ => unreachable!("unknown class {name}"),
    }
}

fn segments(s: &Stroke) -> impl Iterator<Item = (Pt, Pt)> + '_ {
    let n = s.points.len();
    let count = if s.closed { n } else { n.saturating_sub(1) };
    (0..count).map(move |i| (s.points[i], s.points[(i + 1) % n]))
}

/// Fraction of sketches that keep a given minor stroke, averaged over
/// abstraction levels and random dropout.
pub const MINOR_KEEP_RATE: f64 = 0.35;

/// Length-weighted centroid over all strokes, minor strokes scaled by
/// `minor_weight`.
pub fn stroke_centroid(strokes: &[Stroke], minor_weight: f64) -> Pt {
    let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
    for s in strokes {
        let w = if s.minor { minor_weight } else { 1.0 };
        for (a, b) in segments(s) {
            let len = w * ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
            sx += len * (a.0 + b.0) / 2.0;
            sy += len * (a.1 + b.1) / 2.0;
            sw += len;
        }
    }
    (sx / sw, sy / sw)
}

/// The shape of class `index`, recentred on the centroid of what a typical
/// sketcher draws.
pub fn class_shape(index: usize) -> ClassShape {
    let name = CLASS_NAMES[index];
    let mut strokes = raw_shape(name);
    let (cx, cy) = stroke_centroid(&strokes, MINOR_KEEP_RATE);
    for s in &mut strokes {
        for p in &mut s.points {
            p.0 -= cx;
            p.1 -= cy;
        }
    }
    ClassShape { name, strokes }
}

pub(crate) fn stroke_segments(s: &Stroke) -> Vec<(Pt, Pt)> {
    segments(s).collect()
}
