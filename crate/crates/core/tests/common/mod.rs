#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use sketchgen::{Tape, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| r.gen_range(-1.0..1.0))
}

pub fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], stride: usize, pad: usize) -> Tensor<f64> {
    let (n, ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, k) = (w.shape()[0], w.shape()[2]);
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let mut out = Tensor::zeros([n, co, ho, wo]);
    for s in 0..n {
        for o in 0..co {
            for y in 0..ho {
                for xx in 0..wo {
                    let mut acc = b[o];
                    for c in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xx * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.data()[((s * ci + c) * h + iy as usize) * wd + ix as usize]
                                    * w.data()[((o * ci + c) * k + ky) * k + kx];
                            }
                        }
                    }
                    out.data_mut()[((s * co + o) * ho + y) * wo + xx] = acc;
                }
            }
        }
    }
    out
}

pub fn maxpool_oracle(x: &Tensor<f64>) -> Tensor<f64> {
    let s = x.shape();
    let (nc, h, w) = (s[0] * s[1], s[2], s[3]);
    let mut out = Tensor::zeros([s[0], s[1], h / 2, w / 2]);
    for p in 0..nc {
        for y in 0..h / 2 {
            for xx in 0..w / 2 {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        m = m.max(x.data()[(p * h + 2 * y + dy) * w + 2 * xx + dx]);
                    }
                }
                out.data_mut()[(p * (h / 2) + y) * (w / 2) + xx] = m;
            }
        }
    }
    out
}

/// Output `o` samples source coordinate `(o + 0.5) / 2 - 0.5`, clamped.
fn source(o: usize, len: usize) -> (usize, usize, f64) {
    let c = ((o as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (len - 1) as f64);
    let i0 = c.floor() as usize;
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, c - i0 as f64)
}

pub fn upsample_oracle(x: &Tensor<f64>) -> Tensor<f64> {
    let s = x.shape();
    let (nc, h, w) = (s[0] * s[1], s[2], s[3]);
    let mut out = Tensor::zeros([s[0], s[1], 2 * h, 2 * w]);
    for p in 0..nc {
        for oy in 0..2 * h {
            let (y0, y1, fy) = source(oy, h);
            for ox in 0..2 * w {
                let (x0, x1, fx) = source(ox, w);
                let at = |y: usize, xx: usize| x.data()[(p * h + y) * w + xx];
                let v = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x1))
                    + fy * ((1.0 - fx) * at(y1, x0) + fx * at(y1, x1));
                out.data_mut()[(p * 2 * h + oy) * 2 * w + ox] = v;
            }
        }
    }
    out
}

/// Worst absolute deviation of conv2d, maxpool2 and upsample2 from the
/// nested-loop oracles over `count` random shapes each.
pub fn oracle_deviation(count: u64) -> (f64, f64, f64) {
    let (mut dc, mut dp, mut du) = (0.0f64, 0.0f64, 0.0f64);
    for seed in 0..count {
        let mut r = rng(1000 + seed);
        let (n, ci, co) = (r.gen_range(1..=3), r.gen_range(1..=4), r.gen_range(1..=4));
        let (h, w, k) = (r.gen_range(5..=9), r.gen_range(5..=9), r.gen_range(1..=5));
        let (stride, pad) = (r.gen_range(1..=2), r.gen_range(0..=2));
        let x = random(&[n, ci, h, w], &mut r);
        let wt = random(&[co, ci, k, k], &mut r);
        let b: Vec<f64> = (0..co).map(|_| r.gen_range(-1.0..1.0)).collect();
        let mut tape = Tape::new();
        let (xv, wv) = (tape.constant(x.clone()), tape.constant(wt.clone()));
        let bv = tape.constant(Tensor::new([co], b.clone()).unwrap());
        let y = tape.conv2d(xv, wv, Some(bv), stride, pad).unwrap();
        dc = dc.max(tape.value(y).max_abs_diff(&conv_oracle(&x, &wt, &b, stride, pad)));

        let px = random(&[n, ci, 2 * r.gen_range(1..=5), 2 * r.gen_range(1..=5)], &mut r);
        let pv = tape.constant(px.clone());
        let py = tape.maxpool2(pv).unwrap();
        dp = dp.max(tape.value(py).max_abs_diff(&maxpool_oracle(&px)));

        let ux = random(&[n, ci, r.gen_range(1..=6), r.gen_range(1..=6)], &mut r);
        let uv = tape.constant(ux.clone());
        let uy = tape.upsample2(uv).unwrap();
        du = du.max(tape.value(uy).max_abs_diff(&upsample_oracle(&ux)));
    }
    (dc, dp, du)
}

/// A checkerboard patch on an empty canvas, the same patch moved by one box
/// (`shifted`), and the patch with its squares complemented in place
/// (`inverted`). Both alternatives differ from the original on exactly the
/// patch area, so their pixelwise distances to it are equal.
pub struct Checkerboard {
    pub original: Vec<f64>,
    pub shifted: Vec<f64>,
    pub inverted: Vec<f64>,
}

pub fn checkerboard(size: usize, r: &mut ChaCha8Rng) -> Checkerboard {
    let b = r.gen_range(2..=3);
    // Even cell counts keep the strips exposed by the shift half on.
    let cells = 2 * r.gen_range(2..=3);
    let side = b * cells;
    let dir = r.gen_range(0..4);
    let (dx, dy): (isize, isize) = [(1, 0), (-1, 0), (0, 1), (0, -1)][dir];
    let lo = b;
    let hi = size - side - b;
    let (x0, y0) = (r.gen_range(lo..=hi), r.gen_range(lo..=hi));
    let parity = r.gen_range(0..2);
    let draw = |ox: usize, oy: usize, flip: usize| {
        let mut img = vec![0.0; size * size];
        for y in 0..side {
            for x in 0..side {
                let on = (x / b + y / b + parity + flip) % 2 == 0;
                img[(oy + y) * size + ox + x] = on as u8 as f64;
            }
        }
        img
    };
    let sx = (x0 as isize + dx * b as isize) as usize;
    let sy = (y0 as isize + dy * b as isize) as usize;
    Checkerboard {
        original: draw(x0, y0, 0),
        shifted: draw(sx, sy, 0),
        inverted: draw(x0, y0, 1),
    }
}

pub fn pixel_mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}
