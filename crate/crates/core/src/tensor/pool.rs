use super::tape::{Grads, Op};
use super::{expect_rank, Real, Tape, Tensor, Var};
use crate::error::{invalid, Result};

/// Source taps of one output coordinate for factor-2 bilinear upsampling with
/// half-pixel centers: output `o` samples input coordinate `(o + 0.5) / 2 - 0.5`,
/// clamped to `[0, len - 1]`.
pub(crate) fn bilinear_taps(len: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * len)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (len - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

impl<T: Real> Tape<T> {
    /// 2x2 max pooling with stride 2. Ties resolve to the first element in
    /// row-major window order.
    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        expect_rank("maxpool2", &shape, 4)?;
        let (h, w) = (shape[2], shape[3]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(invalid("maxpool2", format!("spatial dims must be even, got {h}x{w}")));
        }
        let (oh, ow) = (h / 2, w / 2);
        let planes = shape[0] * shape[1];
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(planes * oh * ow);
        let mut argmax = Vec::with_capacity(planes * oh * ow);
        for p in 0..planes {
            let base = p * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let top = base + 2 * oy * w + 2 * ox;
                    let mut best = top;
                    for cand in [top + 1, top + w, top + w + 1] {
                        if src[cand] > src[best] {
                            best = cand;
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best as u32);
                }
            }
        }
        let out = Tensor::new(vec![shape[0], shape[1], oh, ow], out)?;
        self.push(out, &[x], Op::MaxPool2 { x, argmax }, "maxpool2")
    }

    /// Factor-2 bilinear upsampling, `[N,C,H,W] -> [N,C,2H,2W]`.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        expect_rank("upsample2", &shape, 4)?;
        let (h, w) = (shape[2], shape[3]);
        if h == 0 || w == 0 {
            return Err(invalid("upsample2", "empty spatial dims"));
        }
        let (ty, tx) = (bilinear_taps(h), bilinear_taps(w));
        let (oh, ow) = (2 * h, 2 * w);
        let planes = shape[0] * shape[1];
        let src = self.value(x).data();
        let mut out = vec![T::zero(); planes * oh * ow];
        for p in 0..planes {
            let s = &src[p * h * w..(p + 1) * h * w];
            let d = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                let fy = T::c(fy);
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let fx = T::c(fx);
                    let top = s[y0 * w + x0] * (T::one() - fx) + s[y0 * w + x1] * fx;
                    let bot = s[y1 * w + x0] * (T::one() - fx) + s[y1 * w + x1] * fx;
                    d[oy * ow + ox] = top * (T::one() - fy) + bot * fy;
                }
            }
        }
        let out = Tensor::new(vec![shape[0], shape[1], oh, ow], out)?;
        self.push(out, &[x], Op::Upsample2 { x }, "upsample2")
    }

    pub(crate) fn upsample2_backward(&self, x: Var, g: &[T], grads: &mut Grads<T>) {
        let shape = self.shape(x).to_vec();
        let (h, w) = (shape[2], shape[3]);
        let (ty, tx) = (bilinear_taps(h), bilinear_taps(w));
        let (oh, ow) = (2 * h, 2 * w);
        let planes = shape[0] * shape[1];
        if let Some(gx) = grads.slot(self, x) {
            for p in 0..planes {
                let d = &mut gx[p * h * w..(p + 1) * h * w];
                let s = &g[p * oh * ow..(p + 1) * oh * ow];
                for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                    let fy = T::c(fy);
                    for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                        let fx = T::c(fx);
                        let v = s[oy * ow + ox];
                        let top = v * (T::one() - fy);
                        let bot = v * fy;
                        d[y0 * w + x0] = d[y0 * w + x0] + top * (T::one() - fx);
                        d[y0 * w + x1] = d[y0 * w + x1] + top * fx;
                        d[y1 * w + x0] = d[y1 * w + x0] + bot * (T::one() - fx);
                        d[y1 * w + x1] = d[y1 * w + x1] + bot * fx;
                    }
                }
            }
        }
    }

    /// Spatial mean, `[N,C,H,W] -> [N,C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        expect_rank("global_avg_pool", &shape, 4)?;
        let plane = shape[2] * shape[3];
        let n = T::c(plane as f64);
        let data = self
            .value(x)
            .data()
            .chunks(plane)
            .map(|c| c.iter().copied().sum::<T>() / n)
            .collect();
        let out = Tensor::new(vec![shape[0], shape[1]], data)?;
        self.push(out, &[x], Op::GlobalAvgPool { x }, "global_avg_pool")
    }

    pub(crate) fn global_avg_pool_backward(&self, x: Var, g: &[T], grads: &mut Grads<T>) {
        let shape = self.shape(x);
        let plane = shape[2] * shape[3];
        let n = T::c(plane as f64);
        if let Some(gx) = grads.slot(self, x) {
            for (chunk, &d) in gx.chunks_mut(plane).zip(g) {
                for v in chunk {
                    *v = *v + d / n;
                }
            }
        }
    }
}
