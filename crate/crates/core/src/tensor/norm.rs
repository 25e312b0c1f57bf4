use super::tape::{Grads, Op};
use super::{expect_rank, Real, Tape, Tensor, Var};
use crate::error::{invalid, mismatch, Result};

/// `(N, C, H*W)` view of a rank-2 or rank-4 activation.
fn nc_plane(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape.len() {
        2 => Ok((shape[0], shape[1], 1)),
        4 => Ok((shape[0], shape[1], shape[2] * shape[3])),
        _ => Err(invalid(op, format!("expected [N,C] or [N,C,H,W], got {shape:?}"))),
    }
}

/// Batch statistics produced by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance (divisor `count - 1`), as used for running averages.
    pub var: Vec<T>,
}

impl<T: Real> Tape<T> {
    fn batch_norm_impl(
        &mut self,
        x: Var,
        scale: Var,
        shift: Var,
        mean: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    ) -> Result<Var> {
        let (n, c, plane) = nc_plane("batch_norm", self.shape(x))?;
        let src = self.value(x).data();
        let (g, b) = (self.value(scale).data(), self.value(shift).data());
        let mut out = vec![T::zero(); src.len()];
        for s in 0..n {
            for ch in 0..c {
                let off = (s * c + ch) * plane;
                let k = inv_std[ch] * g[ch];
                for i in off..off + plane {
                    out[i] = (src[i] - mean[ch]) * k + b[ch];
                }
            }
        }
        let out = Tensor::new(self.shape(x).to_vec(), out)?;
        self.push(
            out,
            &[x, scale, shift],
            Op::BatchNorm {
                x,
                scale,
                shift,
                mean,
                inv_std,
                batch_stats,
            },
            "batch_norm",
        )
    }

    fn check_bn_params(&self, x: Var, scale: Var, shift: Var) -> Result<usize> {
        let (_, c, _) = nc_plane("batch_norm", self.shape(x))?;
        for p in [scale, shift] {
            if self.shape(p) != [c] {
                return Err(mismatch("batch_norm", self.shape(x), self.shape(p)));
            }
        }
        Ok(c)
    }

    /// Per-channel affine normalization with fixed running statistics:
    /// `(x - mean) / sqrt(var + eps) * scale + shift`.
    pub fn batch_norm_inference(
        &mut self,
        x: Var,
        scale: Var,
        shift: Var,
        running_mean: &[T],
        running_var: &[T],
        eps: f64,
    ) -> Result<Var> {
        let c = self.check_bn_params(x, scale, shift)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(mismatch("batch_norm", &[c], &[running_mean.len(), running_var.len()]));
        }
        let eps = T::c(eps);
        let inv_std = running_var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        self.batch_norm_impl(x, scale, shift, running_mean.to_vec(), inv_std, false)
    }

    /// Batch normalization using the statistics of the current batch (over
    /// N and spatial positions). Returns the statistics for running-average
    /// bookkeeping.
    pub fn batch_norm_train(&mut self, x: Var, scale: Var, shift: Var, eps: f64) -> Result<(Var, BatchStats<T>)> {
        let c = self.check_bn_params(x, scale, shift)?;
        let (n, _, plane) = nc_plane("batch_norm", self.shape(x))?;
        let count = n * plane;
        if count < 2 {
            return Err(invalid("batch_norm", "training mode needs at least two values per channel"));
        }
        let src = self.value(x).data();
        let cnt = T::c(count as f64);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut s = T::zero();
            for smp in 0..n {
                let off = (smp * c + ch) * plane;
                s = s + src[off..off + plane].iter().copied().sum::<T>();
            }
            mean[ch] = s / cnt;
            let mut v = T::zero();
            for smp in 0..n {
                let off = (smp * c + ch) * plane;
                for &x in &src[off..off + plane] {
                    let d = x - mean[ch];
                    v = v + d * d;
                }
            }
            var[ch] = v / cnt;
        }
        let eps = T::c(eps);
        let inv_std = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let unbiased = var
            .iter()
            .map(|&v| v * cnt / T::c((count - 1) as f64))
            .collect();
        let stats = BatchStats {
            mean: mean.clone(),
            var: unbiased,
        };
        let out = self.batch_norm_impl(x, scale, shift, mean, inv_std, true)?;
        Ok((out, stats))
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn batch_norm_backward(
        &self,
        x: Var,
        scale: Var,
        shift: Var,
        mean: &[T],
        inv_std: &[T],
        batch_stats: bool,
        g: &[T],
        grads: &mut Grads<T>,
    ) {
        let (n, c, plane) = nc_plane("batch_norm", self.shape(x)).expect("validated");
        let src = self.value(x).data();
        let gamma = self.value(scale).data();
        let mut sum_g = vec![T::zero(); c];
        let mut sum_gx = vec![T::zero(); c];
        for s in 0..n {
            for ch in 0..c {
                let off = (s * c + ch) * plane;
                for i in off..off + plane {
                    sum_g[ch] = sum_g[ch] + g[i];
                    sum_gx[ch] = sum_gx[ch] + g[i] * (src[i] - mean[ch]) * inv_std[ch];
                }
            }
        }
        if let Some(gs) = grads.slot(self, scale) {
            for ch in 0..c {
                gs[ch] = gs[ch] + sum_gx[ch];
            }
        }
        if let Some(gb) = grads.slot(self, shift) {
            for ch in 0..c {
                gb[ch] = gb[ch] + sum_g[ch];
            }
        }
        if let Some(gx) = grads.slot(self, x) {
            let cnt = T::c((n * plane) as f64);
            for s in 0..n {
                for ch in 0..c {
                    let off = (s * c + ch) * plane;
                    let k = gamma[ch] * inv_std[ch];
                    for i in off..off + plane {
                        let d = if batch_stats {
                            let xhat = (src[i] - mean[ch]) * inv_std[ch];
                            k * (g[i] - sum_g[ch] / cnt - xhat * sum_gx[ch] / cnt)
                        } else {
                            k * g[i]
                        };
                        gx[i] = gx[i] + d;
                    }
                }
            }
        }
    }

    /// Adaptive instance normalization. Each (sample, channel) map of
    /// `x [N,C,H,W]` is standardized with its own mean and population
    /// standard deviation, then given the target statistics
    /// `sigma [N,C]` and `mu [N,C]`:
    /// `sigma * (x - mean(x)) / (std(x) + eps) + mu`.
    pub fn adain(&mut self, x: Var, mu: Var, sigma: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        expect_rank("adain", &shape, 4)?;
        let (n, c) = (shape[0], shape[1]);
        for p in [mu, sigma] {
            if self.shape(p) != [n, c] {
                return Err(mismatch("adain", &shape, self.shape(p)));
            }
        }
        let plane = shape[2] * shape[3];
        let cnt = T::c(plane as f64);
        let eps = T::c(eps);
        let src = self.value(x).data();
        let (mu_t, sig_t) = (self.value(mu).data(), self.value(sigma).data());
        let mut out = vec![T::zero(); src.len()];
        let mut inst_mean = vec![T::zero(); n * c];
        let mut inst_std = vec![T::zero(); n * c];
        for k in 0..n * c {
            let xs = &src[k * plane..(k + 1) * plane];
            let m = xs.iter().copied().sum::<T>() / cnt;
            let v = xs.iter().map(|&x| (x - m) * (x - m)).sum::<T>() / cnt;
            let s = v.sqrt();
            inst_mean[k] = m;
            inst_std[k] = s;
            let a = sig_t[k] / (s + eps);
            for (o, &x) in out[k * plane..(k + 1) * plane].iter_mut().zip(xs) {
                *o = (x - m) * a + mu_t[k];
            }
        }
        let out = Tensor::new(shape, out)?;
        self.push(
            out,
            &[x, mu, sigma],
            Op::AdaIn {
                x,
                mu,
                sigma,
                inst_mean,
                inst_std,
                eps,
            },
            "adain",
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn adain_backward(
        &self,
        x: Var,
        mu: Var,
        sigma: Var,
        inst_mean: &[T],
        inst_std: &[T],
        eps: T,
        g: &[T],
        grads: &mut Grads<T>,
    ) {
        let shape = self.shape(x);
        let plane = shape[2] * shape[3];
        let nc = shape[0] * shape[1];
        let cnt = T::c(plane as f64);
        let src = self.value(x).data();
        let sig_t = self.value(sigma).data();
        if let Some(gm) = grads.slot(self, mu) {
            for k in 0..nc {
                gm[k] = gm[k] + g[k * plane..(k + 1) * plane].iter().copied().sum::<T>();
            }
        }
        if let Some(gs) = grads.slot(self, sigma) {
            for k in 0..nc {
                let d = inst_std[k] + eps;
                let acc = g[k * plane..(k + 1) * plane]
                    .iter()
                    .zip(&src[k * plane..(k + 1) * plane])
                    .map(|(&gi, &xi)| gi * (xi - inst_mean[k]) / d)
                    .sum::<T>();
                gs[k] = gs[k] + acc;
            }
        }
        if let Some(gx) = grads.slot(self, x) {
            for k in 0..nc {
                let (m, s) = (inst_mean[k], inst_std[k]);
                let d = s + eps;
                let gk = &g[k * plane..(k + 1) * plane];
                let xk = &src[k * plane..(k + 1) * plane];
                // d(out)/d(xhat) = sigma_t
                let mean_gh = gk.iter().copied().sum::<T>() * sig_t[k] / cnt;
                let cross = gk
                    .iter()
                    .zip(xk)
                    .map(|(&gi, &xi)| gi * sig_t[k] * (xi - m))
                    .sum::<T>();
                let coeff = if s > T::zero() {
                    cross / (cnt * s * d * d)
                } else {
                    T::zero()
                };
                for ((dst, &gi), &xi) in gx[k * plane..(k + 1) * plane].iter_mut().zip(gk).zip(xk) {
                    *dst = *dst + (gi * sig_t[k] - mean_gh) / d - (xi - m) * coeff;
                }
            }
        }
    }

    /// Scales every channel vector (axis 1) of `x` to unit Euclidean norm:
    /// `x / (||x|| + eps)`; zero vectors stay zero.
    pub fn unit_normalize(&mut self, x: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (n, c, plane) = nc_plane("unit_normalize", &shape)?;
        let eps = T::c(eps);
        let src = self.value(x).data();
        let mut norms = vec![T::zero(); n * plane];
        let mut out = vec![T::zero(); src.len()];
        for s in 0..n {
            let base = s * c * plane;
            for p in 0..plane {
                let mut acc = T::zero();
                for ch in 0..c {
                    let v = src[base + ch * plane + p];
                    acc = acc + v * v;
                }
                let r = acc.sqrt();
                norms[s * plane + p] = r;
                let inv = T::one() / (r + eps);
                for ch in 0..c {
                    let i = base + ch * plane + p;
                    out[i] = src[i] * inv;
                }
            }
        }
        let out = Tensor::new(shape, out)?;
        self.push(out, &[x], Op::UnitNormalize { x, norms, eps }, "unit_normalize")
    }

    pub(crate) fn unit_normalize_backward(
        &self,
        x: Var,
        norms: &[T],
        eps: T,
        _out: usize,
        g: &[T],
        grads: &mut Grads<T>,
    ) {
        let shape = self.shape(x);
        let (n, c, plane) = nc_plane("unit_normalize", shape).expect("validated");
        let src = self.value(x).data();
        if let Some(gx) = grads.slot(self, x) {
            for s in 0..n {
                let base = s * c * plane;
                for p in 0..plane {
                    let r = norms[s * plane + p];
                    let d = r + eps;
                    let mut dot = T::zero();
                    for ch in 0..c {
                        let i = base + ch * plane + p;
                        dot = dot + g[i] * src[i];
                    }
                    let coeff = if r > T::zero() { dot / (r * d * d) } else { T::zero() };
                    for ch in 0..c {
                        let i = base + ch * plane + p;
                        gx[i] = gx[i] + g[i] / d - src[i] * coeff;
                    }
                }
            }
        }
    }
}
