use super::tape::{BinaryKind, Grads, Op, UnaryKind};
use super::{expect_rank, gemm, strides, Real, Tape, Tensor, Trans, Var};
use crate::error::{invalid, mismatch, Error, Result};

/// Numpy-style broadcast of two shapes (trailing axes aligned).
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` expressed in the index space of `out`, with zero
/// stride along broadcast axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let own = strides(shape);
    let offset = out.len() - shape.len();
    (0..out.len())
        .map(|i| {
            if i < offset || shape[i - offset] == 1 {
                0
            } else {
                own[i - offset]
            }
        })
        .collect()
}

/// Calls `f(out_index, a_index, b_index)` for every element of `out`, in
/// row-major order.
fn for_each_broadcast(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let total: usize = out.iter().product();
    if total == 0 {
        return;
    }
    let nd = out.len();
    let mut idx = vec![0usize; nd];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..total {
        f(o, ia, ib);
        for d in (0..nd).rev() {
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softplus<T: Real>(x: T) -> T {
    if x > T::c(20.0) {
        x
    } else if x < T::c(-20.0) {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

impl<T: Real> Tape<T> {
    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var, name: &'static str) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let f = |x: T, y: T| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
            BinaryKind::Div => x / y,
        };
        let out = if va.shape() == vb.shape() {
            let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(va.shape().to_vec(), data)?
        } else {
            let shape = broadcast_shape(va.shape(), vb.shape())
                .ok_or_else(|| mismatch(name, va.shape(), vb.shape()))?;
            let sa = broadcast_strides(va.shape(), &shape);
            let sb = broadcast_strides(vb.shape(), &shape);
            let mut data = vec![T::zero(); shape.iter().product()];
            let (da, db) = (va.data(), vb.data());
            for_each_broadcast(&shape, &sa, &sb, |o, i, j| data[o] = f(da[i], db[j]));
            Tensor::new(shape, data)?
        };
        self.push(out, &[a, b], Op::Binary { kind, a, b }, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b, "mul")
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b, "div")
    }

    pub(crate) fn binary_backward(&self, kind: BinaryKind, a: Var, b: Var, out: usize, g: &[T], grads: &mut Grads<T>) {
        let out_shape = self.nodes[out].value.shape().to_vec();
        let va = self.value(a).data();
        let vb = self.value(b).data();
        let sa = broadcast_strides(self.shape(a), &out_shape);
        let sb = broadcast_strides(self.shape(b), &out_shape);
        if let Some(ga) = grads.slot(self, a) {
            for_each_broadcast(&out_shape, &sa, &sb, |o, i, j| {
                let d = match kind {
                    BinaryKind::Add | BinaryKind::Sub => g[o],
                    BinaryKind::Mul => g[o] * vb[j],
                    BinaryKind::Div => g[o] / vb[j],
                };
                ga[i] = ga[i] + d;
            });
        }
        if let Some(gb) = grads.slot(self, b) {
            for_each_broadcast(&out_shape, &sa, &sb, |o, i, j| {
                let d = match kind {
                    BinaryKind::Add => g[o],
                    BinaryKind::Sub => -g[o],
                    BinaryKind::Mul => g[o] * va[i],
                    BinaryKind::Div => -g[o] * va[i] / (vb[j] * vb[j]),
                };
                gb[j] = gb[j] + d;
            });
        }
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let factor = T::c(factor);
        let v = self.value(a);
        let out = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&x| x * factor).collect())?;
        self.push(out, &[a], Op::Scale { a, factor }, "scale")
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let c = T::c(c);
        let v = self.value(a);
        let out = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&x| x + c).collect())?;
        self.push(out, &[a], Op::AddScalar { a }, "add_scalar")
    }

    fn unary(&mut self, kind: UnaryKind, a: Var, name: &'static str) -> Result<Var> {
        let v = self.value(a);
        let f = |x: T| match kind {
            UnaryKind::Relu => {
                if x > T::zero() {
                    x
                } else {
                    T::zero()
                }
            }
            UnaryKind::Sigmoid => sigmoid(x),
            UnaryKind::Softplus => softplus(x),
            UnaryKind::Exp => x.exp(),
            UnaryKind::Sqrt => x.sqrt(),
        };
        let out = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&x| f(x)).collect())?;
        self.push(out, &[a], Op::Unary { kind, a }, name)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Relu, a, "relu")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Sigmoid, a, "sigmoid")
    }

    /// `ln(1 + e^x)`, a smooth strictly positive map.
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Softplus, a, "softplus")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Exp, a, "exp")
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary(UnaryKind::Sqrt, a, "sqrt")
    }

    pub(crate) fn unary_backward(&self, kind: UnaryKind, a: Var, out: usize, g: &[T], grads: &mut Grads<T>) {
        let x = self.value(a).data();
        let y = self.nodes[out].value.data();
        let half = T::c(0.5);
        if let Some(ga) = grads.slot(self, a) {
            for i in 0..g.len() {
                let d = match kind {
                    UnaryKind::Relu => {
                        if x[i] > T::zero() {
                            g[i]
                        } else {
                            T::zero()
                        }
                    }
                    UnaryKind::Sigmoid => g[i] * y[i] * (T::one() - y[i]),
                    UnaryKind::Softplus => g[i] * sigmoid(x[i]),
                    UnaryKind::Exp => g[i] * y[i],
                    UnaryKind::Sqrt => g[i] * half / y[i],
                };
                ga[i] = ga[i] + d;
            }
        }
    }

    /// Elementwise `x^p`.
    pub fn pow(&mut self, a: Var, exponent: f64) -> Result<Var> {
        let p = T::c(exponent);
        let v = self.value(a);
        let out = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&x| x.powf(p)).collect())?;
        self.push(out, &[a], Op::Pow { a, exponent: p }, "pow")
    }

    pub(crate) fn pow_backward(&self, a: Var, p: T, g: &[T], grads: &mut Grads<T>) {
        let x = self.value(a).data();
        if let Some(ga) = grads.slot(self, a) {
            let pm1 = p - T::one();
            for i in 0..g.len() {
                ga[i] = ga[i] + g[i] * p * x[i].powf(pm1);
            }
        }
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ndim() != 2 || vb.ndim() != 2 || va.shape()[1] != vb.shape()[0] {
            return Err(mismatch("matmul", va.shape(), vb.shape()));
        }
        let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, va.data(), Trans::No, vb.data(), Trans::No, T::zero(), &mut out);
        let out = Tensor::new(vec![m, n], out)?;
        self.push(out, &[a, b], Op::MatMul { a, b }, "matmul")
    }

    pub(crate) fn matmul_backward(&self, a: Var, b: Var, g: &[T], grads: &mut Grads<T>) {
        let (va, vb) = (self.value(a), self.value(b));
        let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        if let Some(ga) = grads.slot(self, a) {
            gemm(m, n, k, g, Trans::No, vb.data(), Trans::Yes, T::one(), ga);
        }
        if let Some(gb) = grads.slot(self, b) {
            gemm(k, m, n, va.data(), Trans::Yes, g, Trans::No, T::one(), gb);
        }
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape.to_vec())?;
        self.push(out, &[a], Op::Reshape { a }, "reshape")
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs.first().ok_or_else(|| invalid("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(invalid("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.shape(*v);
            let same = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !same {
                return Err(mismatch("concat", &base, s));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in inputs {
                let t = self.value(*v);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let out = Tensor::new(shape, data)?;
        self.push(
            out,
            inputs,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            "concat",
        )
    }

    pub(crate) fn concat_backward(&self, inputs: &[Var], axis: usize, out: usize, g: &[T], grads: &mut Grads<T>) {
        let shape = self.nodes[out].value.shape();
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let row = shape[axis] * inner;
        let mut offset = 0;
        for v in inputs {
            let chunk = self.shape(*v)[axis] * inner;
            if let Some(gv) = grads.slot(self, *v) {
                for o in 0..outer {
                    let src = &g[o * row + offset..o * row + offset + chunk];
                    for (d, &x) in gv[o * chunk..(o + 1) * chunk].iter_mut().zip(src) {
                        *d = *d + x;
                    }
                }
            }
            offset += chunk;
        }
    }

    /// `a[.., start..start + len, ..]` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(invalid(
                "slice",
                format!("range {start}..{} on axis {axis} of {shape:?}", start + len),
            ));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * shape[axis] + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let out = Tensor::new(out_shape, data)?;
        self.push(out, &[a], Op::Slice { a, axis, start }, "slice")
    }

    pub(crate) fn slice_backward(&self, a: Var, axis: usize, start: usize, out: usize, g: &[T], grads: &mut Grads<T>) {
        let shape = self.shape(a);
        let len = self.nodes[out].value.shape()[axis];
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let extent = shape[axis];
        if let Some(ga) = grads.slot(self, a) {
            for o in 0..outer {
                let base = (o * extent + start) * inner;
                for (d, &x) in ga[base..base + len * inner]
                    .iter_mut()
                    .zip(&g[o * len * inner..(o + 1) * len * inner])
                {
                    *d = *d + x;
                }
            }
        }
    }

    /// Elementwise product with a fixed mask (dropout, flips of sign, ...).
    pub fn mask(&mut self, a: Var, mask: Vec<T>) -> Result<Var> {
        let v = self.value(a);
        if mask.len() != v.numel() {
            return Err(mismatch("mask", v.shape(), &[mask.len()]));
        }
        let out = Tensor::new(
            v.shape().to_vec(),
            v.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect(),
        )?;
        self.push(out, &[a], Op::Mask { a, mask }, "mask")
    }

    /// Selects rows of a 2-D table; the gradient scatters back into the
    /// selected rows only.
    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(table);
        expect_rank("gather_rows", t.shape(), 2)?;
        let (count, width) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            if r >= count {
                return Err(Error::IndexOutOfRange {
                    what: "embedding table",
                    index: r,
                    len: count,
                });
            }
            data.extend_from_slice(&t.data()[r * width..(r + 1) * width]);
        }
        let out = Tensor::new(vec![rows.len(), width], data)?;
        self.push(
            out,
            &[table],
            Op::Gather {
                table,
                rows: rows.to_vec(),
            },
            "gather_rows",
        )
    }

    /// Mean softmax cross-entropy of `[N, K]` logits against class labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let v = self.value(logits);
        expect_rank("cross_entropy", v.shape(), 2)?;
        let (n, k) = (v.shape()[0], v.shape()[1]);
        if labels.len() != n {
            return Err(mismatch("cross_entropy", v.shape(), &[labels.len()]));
        }
        let mut probs = vec![T::zero(); n * k];
        let mut loss = T::zero();
        for (i, &label) in labels.iter().enumerate() {
            if label >= k {
                return Err(Error::IndexOutOfRange {
                    what: "class label",
                    index: label,
                    len: k,
                });
            }
            let row = &v.data()[i * k..(i + 1) * k];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for (p, &x) in probs[i * k..(i + 1) * k].iter_mut().zip(row) {
                *p = (x - max).exp();
                z = z + *p;
            }
            for p in &mut probs[i * k..(i + 1) * k] {
                *p = *p / z;
            }
            loss = loss - (row[label] - max - z.ln());
        }
        let out = Tensor::scalar(loss / T::c(n as f64));
        self.push(
            out,
            &[logits],
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            "cross_entropy",
        )
    }
}
