use super::tape::{Grads, Op};
use super::{expect_rank, gemm, Real, Tape, Tensor, Trans, Var};
use crate::error::{invalid, mismatch, Result};

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn plane(&self) -> usize {
        self.oh * self.ow
    }

    /// Unfolds the patches of one sample into a `[C*kh*kw, oh*ow]` matrix.
    fn im2col<T: Real>(&self, x: &[T], col: &mut [T]) {
        let plane = self.plane();
        col.fill(T::zero());
        for c in 0..self.c {
            let src = &x[c * self.h * self.w..][..self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let r = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut col[r * plane..(r + 1) * plane];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * self.w..][..self.w];
                        let dst_row = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        if self.stride == 1 {
                            let lo = self.pad.saturating_sub(kj);
                            let hi = (self.w + self.pad - kj).min(self.ow);
                            if lo < hi {
                                let s0 = lo + kj - self.pad;
                                dst_row[lo..hi].copy_from_slice(&src_row[s0..s0 + hi - lo]);
                            }
                            continue;
                        }
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`]: folds column gradients back onto one sample.
    fn col2im<T: Real>(&self, col: &[T], dx: &mut [T]) {
        let plane = self.plane();
        for c in 0..self.c {
            let dst = &mut dx[c * self.h * self.w..][..self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let r = (c * self.kh + ki) * self.kw + kj;
                    let src = &col[r * plane..(r + 1) * plane];
                    for oy in 0..self.oh {
                        let iy = (oy * self.stride + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst_row = &mut dst[iy as usize * self.w..][..self.w];
                        let src_row = &src[oy * self.ow..(oy + 1) * self.ow];
                        if self.stride == 1 {
                            let lo = self.pad.saturating_sub(kj);
                            let hi = (self.w + self.pad - kj).min(self.ow);
                            if lo < hi {
                                let s0 = lo + kj - self.pad;
                                for (d, &s) in dst_row[s0..s0 + hi - lo].iter_mut().zip(&src_row[lo..hi]) {
                                    *d = *d + s;
                                }
                            }
                            continue;
                        }
                        for (ox, &s) in src_row.iter().enumerate() {
                            let ix = (ox * self.stride + kj) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst_row[ix as usize] = dst_row[ix as usize] + s;
                            }
                        }
                    }
                }
            }
        }
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn geometry(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Result<ConvGeom> {
    expect_rank("conv2d", x, 4)?;
    expect_rank("conv2d", w, 4)?;
    if x[1] != w[1] {
        return Err(mismatch("conv2d", x, w));
    }
    if stride == 0 || w[2] == 0 || w[3] == 0 {
        return Err(invalid("conv2d", "stride and kernel extents must be positive"));
    }
    let (h, wd) = (x[2] + 2 * pad, x[3] + 2 * pad);
    if h < w[2] || wd < w[3] {
        return Err(mismatch("conv2d", x, w));
    }
    Ok(ConvGeom {
        n: x[0],
        c: x[1],
        h: x[2],
        w: x[3],
        kh: w[2],
        kw: w[3],
        stride,
        pad,
        oh: (h - w[2]) / stride + 1,
        ow: (wd - w[3]) / stride + 1,
    })
}

impl<T: Real> Tape<T> {
    /// 2-D cross-correlation: `x [N,C,H,W]`, `w [O,C,kh,kw]`, optional
    /// bias `[O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let geo = geometry(self.shape(x), self.shape(w), stride, pad)?;
        let out_c = self.shape(w)[0];
        if let Some(b) = b {
            if self.shape(b) != [out_c] {
                return Err(mismatch("conv2d bias", self.shape(w), self.shape(b)));
            }
        }
        let plane = geo.plane();
        let rows = geo.rows();
        let in_len = geo.c * geo.h * geo.w;
        let mut out = vec![T::zero(); geo.n * out_c * plane];
        let mut col = if geo.is_pointwise() { Vec::new() } else { vec![T::zero(); rows * plane] };
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        for n in 0..geo.n {
            let xs = &xd[n * in_len..(n + 1) * in_len];
            let dst = &mut out[n * out_c * plane..(n + 1) * out_c * plane];
            let src: &[T] = if geo.is_pointwise() {
                xs
            } else {
                geo.im2col(xs, &mut col);
                &col
            };
            gemm(out_c, rows, plane, wd, Trans::No, src, Trans::No, T::zero(), dst);
        }
        if let Some(b) = b {
            let bias = self.value(b).data();
            for chunk in out.chunks_mut(out_c * plane) {
                for (o, &bo) in bias.iter().enumerate() {
                    for d in &mut chunk[o * plane..(o + 1) * plane] {
                        *d = *d + bo;
                    }
                }
            }
        }
        let out = Tensor::new(vec![geo.n, out_c, geo.oh, geo.ow], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(out, &inputs, Op::Conv2d { x, w, b, stride, pad }, "conv2d")
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn conv2d_backward(
        &self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
        _out: usize,
        g: &[T],
        grads: &mut Grads<T>,
    ) {
        let geo = geometry(self.shape(x), self.shape(w), stride, pad).expect("validated in forward");
        let out_c = self.shape(w)[0];
        let plane = geo.plane();
        let rows = geo.rows();
        let in_len = geo.c * geo.h * geo.w;
        if let Some(b) = b {
            if let Some(gb) = grads.slot(self, b) {
                for chunk in g.chunks(out_c * plane) {
                    for (o, d) in gb.iter_mut().enumerate() {
                        *d = *d + chunk[o * plane..(o + 1) * plane].iter().copied().sum::<T>();
                    }
                }
            }
        }
        let need_w = self.requires_grad(w);
        let need_x = self.requires_grad(x);
        if !need_w && !need_x {
            return;
        }
        let pointwise = geo.is_pointwise();
        let xd = self.value(x).data();
        let wd = self.value(w).data();
        let mut col = if pointwise { Vec::new() } else { vec![T::zero(); rows * plane] };
        if need_w {
            let gw = grads.slot(self, w).expect("requires grad");
            for n in 0..geo.n {
                let xs = &xd[n * in_len..(n + 1) * in_len];
                let gs = &g[n * out_c * plane..(n + 1) * out_c * plane];
                let src: &[T] = if pointwise {
                    xs
                } else {
                    geo.im2col(xs, &mut col);
                    &col
                };
                gemm(out_c, plane, rows, gs, Trans::No, src, Trans::Yes, T::one(), gw);
            }
        }
        if need_x {
            let gx = grads.slot(self, x).expect("requires grad");
            for n in 0..geo.n {
                let gs = &g[n * out_c * plane..(n + 1) * out_c * plane];
                let dxs = &mut gx[n * in_len..(n + 1) * in_len];
                if pointwise {
                    gemm(rows, out_c, plane, wd, Trans::Yes, gs, Trans::No, T::one(), dxs);
                } else {
                    gemm(rows, out_c, plane, wd, Trans::Yes, gs, Trans::No, T::zero(), &mut col);
                    geo.col2im(&col, dxs);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64([1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap());
        let w = tape.constant(Tensor::from_f64([1, 1, 1, 1], &[1.0]).unwrap());
        let b = tape.constant(Tensor::from_f64([1], &[0.0]).unwrap());
        let y = tape.conv2d(x, w, Some(b), 1, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn ones_kernel_with_padding() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(vec![1, 1, 3, 3], 1.0));
        let w = tape.constant(Tensor::full(vec![1, 1, 3, 3], 1.0));
        let y = tape.conv2d(x, w, None, 1, 1).unwrap();
        assert_eq!(
            tape.value(y).data(),
            &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]
        );
    }

    #[test]
    fn strided_output_size() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(vec![2, 3, 8, 8]));
        let w = tape.constant(Tensor::zeros(vec![4, 3, 3, 3]));
        let y = tape.conv2d(x, w, None, 2, 1).unwrap();
        assert_eq!(tape.shape(y), &[2, 4, 4, 4]);
    }

    #[test]
    fn channel_mismatch_is_reported() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(vec![1, 2, 4, 4]));
        let w = tape.constant(Tensor::zeros(vec![1, 3, 3, 3]));
        let err = tape.conv2d(x, w, None, 1, 1).unwrap_err();
        assert!(err.to_string().contains("conv2d"));
    }
}
