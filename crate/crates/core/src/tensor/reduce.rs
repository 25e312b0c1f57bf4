use super::tape::{Grads, Op, ReduceKind};
use super::{strides, Real, Tape, Tensor, Var};
use crate::error::{invalid, Result};

/// For each input element, the flat index of the reduced output element it
/// contributes to. Reduction order is the input's row-major order.
fn reduce_map(shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let kept: Vec<usize> = shape
        .iter()
        .enumerate()
        .map(|(d, &n)| if axes.contains(&d) { 1 } else { n })
        .collect();
    let out_strides = strides(&kept);
    let eff: Vec<usize> = (0..shape.len())
        .map(|d| if axes.contains(&d) { 0 } else { out_strides[d] })
        .collect();
    let total: usize = shape.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; shape.len()];
    let mut o = 0usize;
    for _ in 0..total {
        map.push(o);
        for d in (0..shape.len()).rev() {
            idx[d] += 1;
            o += eff[d];
            if idx[d] < shape[d] {
                break;
            }
            o -= eff[d] * shape[d];
            idx[d] = 0;
        }
    }
    (map, kept)
}

fn check_axes(op: &'static str, shape: &[usize], axes: &[usize]) -> Result<()> {
    for (i, &a) in axes.iter().enumerate() {
        if a >= shape.len() || axes[..i].contains(&a) {
            return Err(invalid(op, format!("bad axes {axes:?} for shape {shape:?}")));
        }
    }
    Ok(())
}

impl<T: Real> Tape<T> {
    fn reduce(&mut self, kind: ReduceKind, a: Var, axes: &[usize], keepdim: bool, name: &'static str) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        check_axes(name, &shape, axes)?;
        let (map, kept) = reduce_map(&shape, axes);
        let out_len: usize = kept.iter().product();
        let count: usize = axes.iter().map(|&d| shape[d]).product();
        let n = T::c(count as f64);
        let x = self.value(a).data();
        let mut sums = vec![T::zero(); out_len];
        for (&o, &v) in map.iter().zip(x) {
            sums[o] = sums[o] + v;
        }
        let data = match kind {
            ReduceKind::Sum => sums,
            ReduceKind::Mean => sums.into_iter().map(|s| s / n).collect(),
            ReduceKind::Variance => {
                let means: Vec<T> = sums.into_iter().map(|s| s / n).collect();
                let mut acc = vec![T::zero(); out_len];
                for (&o, &v) in map.iter().zip(x) {
                    let d = v - means[o];
                    acc[o] = acc[o] + d * d;
                }
                acc.into_iter().map(|s| s / n).collect()
            }
        };
        let out_shape = if keepdim {
            kept
        } else {
            shape
                .iter()
                .enumerate()
                .filter(|(d, _)| !axes.contains(d))
                .map(|(_, &s)| s)
                .collect()
        };
        let out = Tensor::new(out_shape, data)?;
        self.push(
            out,
            &[a],
            Op::Reduce {
                kind,
                a,
                axes: axes.to_vec(),
            },
            name,
        )
    }

    pub fn sum(&mut self, a: Var, axes: &[usize], keepdim: bool) -> Result<Var> {
        self.reduce(ReduceKind::Sum, a, axes, keepdim, "sum")
    }

    pub fn mean(&mut self, a: Var, axes: &[usize], keepdim: bool) -> Result<Var> {
        self.reduce(ReduceKind::Mean, a, axes, keepdim, "mean")
    }

    /// Population variance (divisor = number of reduced elements).
    pub fn variance(&mut self, a: Var, axes: &[usize], keepdim: bool) -> Result<Var> {
        self.reduce(ReduceKind::Variance, a, axes, keepdim, "variance")
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(a).len()).collect();
        self.sum(a, &axes, false)
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.shape(a).len()).collect();
        self.mean(a, &axes, false)
    }

    pub(crate) fn reduce_backward(
        &self,
        kind: ReduceKind,
        a: Var,
        axes: &[usize],
        _out: usize,
        g: &[T],
        grads: &mut Grads<T>,
    ) {
        let shape = self.shape(a).to_vec();
        let (map, kept) = reduce_map(&shape, axes);
        let count: usize = axes.iter().map(|&d| shape[d]).product();
        let n = T::c(count as f64);
        let x = self.value(a).data();
        let means = if kind == ReduceKind::Variance {
            let mut sums = vec![T::zero(); kept.iter().product()];
            for (&o, &v) in map.iter().zip(x) {
                sums[o] = sums[o] + v;
            }
            sums.into_iter().map(|s| s / n).collect()
        } else {
            Vec::new()
        };
        let two = T::c(2.0);
        if let Some(ga) = grads.slot(self, a) {
            for (i, &o) in map.iter().enumerate() {
                let d = match kind {
                    ReduceKind::Sum => g[o],
                    ReduceKind::Mean => g[o] / n,
                    ReduceKind::Variance => g[o] * two * (x[i] - means[o]) / n,
                };
                ga[i] = ga[i] + d;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_of_all() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64([2, 2], &[1.0, 3.0, 5.0, 7.0]).unwrap());
        let m = tape.mean_all(x).unwrap();
        assert_eq!(tape.value(m).item(), 4.0);
    }

    #[test]
    fn reduce_over_axes() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_f64([2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let s0 = tape.sum(x, &[0], false).unwrap();
        assert_eq!(tape.value(s0).data(), &[5.0, 7.0, 9.0]);
        let s1 = tape.sum(x, &[1], true).unwrap();
        assert_eq!(tape.shape(s1), &[2, 1]);
        assert_eq!(tape.value(s1).data(), &[6.0, 15.0]);
        let v = tape.variance(x, &[1], false).unwrap();
        let expect = 2.0 / 3.0;
        for &got in tape.value(v).data() {
            assert!((got - expect).abs() < 1e-12);
        }
        assert!(tape.sum(x, &[2], false).is_err());
        assert!(tape.sum(x, &[0, 0], false).is_err());
    }
}
