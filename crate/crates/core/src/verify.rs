//! Finite-difference verification of every differentiable layer.

use rand::Rng as _;
use serde::Serialize;

use crate::error::Result;
use crate::loss;
use crate::models::{FeatureStack, TrunkConfig, TrunkConv};
use crate::rng::{self, Rng};
use crate::tensor::{finite_diff_check_many, Tape, Tensor, Var};

pub const GRAD_TOLERANCE: f64 = 1e-5;
const EPS: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct GradCase {
    pub layer: &'static str,
    pub seeds: usize,
    pub max_rel_err: f64,
}

impl GradCase {
    pub fn passed(&self) -> bool {
        self.max_rel_err < GRAD_TOLERANCE
    }
}

fn uniform(shape: &[usize], lo: f64, hi: f64, r: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| r.gen_range(lo..hi))
}

/// Values bounded away from zero so ReLU kinks are never straddled.
fn off_zero(shape: &[usize], r: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = r.gen_range(0.1..1.0);
        if r.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// `sum(y * w)` with fixed random weights, so every output coordinate
/// carries a distinct adjoint.
fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut r = rng::stream(seed, "projection", 0);
    let w = uniform(tape.shape(y), -1.0, 1.0, &mut r);
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    tape.sum_all(p)
}

type Case = (&'static str, Box<dyn Fn(u64) -> Result<f64>>);

fn check(points: Vec<Tensor<f64>>, seed: u64, f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>) -> Result<f64> {
    let r = finite_diff_check_many(|t, v| { let y = f(t, v)?; project(t, y, seed) }, &points, EPS)?;
    Ok(r.max_rel_err)
}

fn tiny_trunk(seed: u64) -> Result<FeatureStack<f64>> {
    let c = |out, pool| TrunkConv { out, kernel: 3, pool };
    let cfg = TrunkConfig {
        in_channels: 1,
        input_size: 8,
        convs: vec![c(3, true), c(4, true), c(4, false), c(3, false), c(3, false)],
        hidden: 4,
        dropout: 0.0,
    };
    FeatureStack::build(&cfg, seed)
}

fn cases() -> Vec<Case> {
    vec![
        ("conv2d", Box::new(|s| {
            let mut r = rng::stream(s, "grad-conv", 0);
            let (n, ci, co) = (r.gen_range(1..=2), r.gen_range(1..=3), r.gen_range(1..=3));
            let (h, w, k) = (r.gen_range(3..=6), r.gen_range(3..=6), r.gen_range(1..=3));
            let (stride, pad) = (r.gen_range(1..=2), r.gen_range(0..=1));
            let pts = vec![
                uniform(&[n, ci, h, w], -1.0, 1.0, &mut r),
                uniform(&[co, ci, k, k], -1.0, 1.0, &mut r),
                uniform(&[co], -1.0, 1.0, &mut r),
            ];
            check(pts, s, |t, v| t.conv2d(v[0], v[1], Some(v[2]), stride, pad))
        })),
        ("maxpool2", Box::new(|s| {
            let mut r = rng::stream(s, "grad-pool", 0);
            let shape = [r.gen_range(1..=2), r.gen_range(1..=3), 2 * r.gen_range(1..=3), 2 * r.gen_range(1..=3)];
            check(vec![uniform(&shape, -1.0, 1.0, &mut r)], s, |t, v| t.maxpool2(v[0]))
        })),
        ("bilinear_upsample2", Box::new(|s| {
            let mut r = rng::stream(s, "grad-up", 0);
            let shape = [r.gen_range(1..=2), r.gen_range(1..=3), r.gen_range(1..=4), r.gen_range(1..=4)];
            check(vec![uniform(&shape, -1.0, 1.0, &mut r)], s, |t, v| t.upsample2(v[0]))
        })),
        ("batchnorm_inference", Box::new(|s| {
            let mut r = rng::stream(s, "grad-bn", 0);
            let c = r.gen_range(1..=3);
            let shape = [r.gen_range(1..=2), c, r.gen_range(1..=4), r.gen_range(1..=4)];
            let mean: Vec<f64> = (0..c).map(|_| r.gen_range(-0.5..0.5)).collect();
            let var: Vec<f64> = (0..c).map(|_| r.gen_range(0.2..2.0)).collect();
            let pts = vec![
                uniform(&shape, -1.0, 1.0, &mut r),
                uniform(&[c], 0.5, 1.5, &mut r),
                uniform(&[c], -0.5, 0.5, &mut r),
            ];
            check(pts, s, move |t, v| t.batch_norm_inference(v[0], v[1], v[2], &mean, &var, 1e-5))
        })),
        ("batchnorm_train", Box::new(|s| {
            let mut r = rng::stream(s, "grad-bnt", 0);
            let c = r.gen_range(1..=3);
            let shape = [r.gen_range(2..=3), c, r.gen_range(1..=3), r.gen_range(1..=3)];
            let pts = vec![
                uniform(&shape, -1.0, 1.0, &mut r),
                uniform(&[c], 0.5, 1.5, &mut r),
                uniform(&[c], -0.5, 0.5, &mut r),
            ];
            check(pts, s, |t, v| Ok(t.batch_norm_train(v[0], v[1], v[2], 1e-5)?.0))
        })),
        ("adain", Box::new(|s| {
            let mut r = rng::stream(s, "grad-adain", 0);
            let (n, c) = (r.gen_range(1..=2), r.gen_range(1..=3));
            let shape = [n, c, r.gen_range(2..=4), r.gen_range(2..=4)];
            let pts = vec![
                uniform(&shape, -1.0, 1.0, &mut r),
                uniform(&[n, c], -1.0, 1.0, &mut r),
                uniform(&[n, c], 0.5, 2.0, &mut r),
            ];
            check(pts, s, |t, v| t.adain(v[0], v[1], v[2], crate::nn::ADAIN_EPS))
        })),
        ("embedding_lookup", Box::new(|s| {
            let mut r = rng::stream(s, "grad-embed", 0);
            let (rows, width) = (r.gen_range(2..=5), r.gen_range(1..=4));
            let ids: Vec<usize> = (0..r.gen_range(1..=4)).map(|_| r.gen_range(0..rows)).collect();
            let pts = vec![uniform(&[rows, width], -1.0, 1.0, &mut r)];
            check(pts, s, move |t, v| {
                let g = t.gather_rows(v[0], &ids)?;
                t.softplus(g)
            })
        })),
        ("sigmoid", Box::new(|s| {
            let mut r = rng::stream(s, "grad-sig", 0);
            check(vec![uniform(&[r.gen_range(1..=6)], -4.0, 4.0, &mut r)], s, |t, v| t.sigmoid(v[0]))
        })),
        ("relu", Box::new(|s| {
            let mut r = rng::stream(s, "grad-relu", 0);
            check(vec![off_zero(&[r.gen_range(1..=6)], &mut r)], s, |t, v| t.relu(v[0]))
        })),
        ("unit_normalize", Box::new(|s| {
            let mut r = rng::stream(s, "grad-unit", 0);
            let shape = [r.gen_range(1..=2), r.gen_range(1..=4), r.gen_range(1..=3), r.gen_range(1..=3)];
            check(vec![off_zero(&shape, &mut r)], s, |t, v| t.unit_normalize(v[0], loss::UNIT_NORM_EPS))
        })),
        ("psim", Box::new(|s| {
            let mut r = rng::stream(s, "grad-psim", 0);
            let trunk = tiny_trunk(s)?;
            let x = uniform(&[1, 1, 8, 8], 0.05, 0.95, &mut r);
            let target = uniform(&[1, 1, 8, 8], 0.0, 1.0, &mut r);
            let rep = finite_diff_check_many(
                |t, v| {
                    let tv = t.constant(target.clone());
                    loss::psim(t, &trunk, v[0], tv)
                },
                &[x],
                EPS,
            )?;
            Ok(rep.max_rel_err)
        })),
    ]
}

/// Runs every layer check on `seeds` random instances.
pub fn gradient_suite(seeds: usize) -> Result<Vec<GradCase>> {
    cases()
        .into_iter()
        .map(|(layer, f)| {
            let mut worst = 0.0f64;
            for s in 0..seeds as u64 {
                worst = worst.max(f(s)?);
            }
            Ok(GradCase {
                layer,
                seeds,
                max_rel_err: worst,
            })
        })
        .collect()
}
