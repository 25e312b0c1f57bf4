use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum UnaryKind {
    Relu,
    Sigmoid,
    Softplus,
    Exp,
    Sqrt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum ReduceKind {
    Sum,
    Mean,
    Variance,
}

pub(crate) enum Op<T> {
    /// Input or parameter; gradients are kept after backward.
    Leaf,
    /// Computed from inputs none of which require gradients.
    Constant,
    Binary {
        kind: BinaryKind,
        a: Var,
        b: Var,
    },
    Scale {
        a: Var,
        factor: T,
    },
    AddScalar {
        a: Var,
    },
    Unary {
        kind: UnaryKind,
        a: Var,
    },
    Pow {
        a: Var,
        exponent: T,
    },
    MatMul {
        a: Var,
        b: Var,
    },
    Reduce {
        kind: ReduceKind,
        a: Var,
        axes: Vec<usize>,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        a: Var,
        axis: usize,
        start: usize,
    },
    Reshape {
        a: Var,
    },
    Mask {
        a: Var,
        mask: Vec<T>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<u32>,
    },
    Upsample2 {
        x: Var,
    },
    GlobalAvgPool {
        x: Var,
    },
    BatchNorm {
        x: Var,
        scale: Var,
        shift: Var,
        /// Per-channel normalization mean and `1/sqrt(var + eps)`.
        mean: Vec<T>,
        inv_std: Vec<T>,
        /// True when `mean`/`inv_std` were computed from the batch itself.
        batch_stats: bool,
    },
    AdaIn {
        x: Var,
        mu: Var,
        sigma: Var,
        /// Per (sample, channel) instance mean and population std.
        inst_mean: Vec<T>,
        inst_std: Vec<T>,
        eps: T,
    },
    Gather {
        table: Var,
        rows: Vec<usize>,
    },
    UnitNormalize {
        x: Var,
        norms: Vec<T>,
        eps: T,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub requires_grad: bool,
    pub op: Op<T>,
}

/// Records primitive operations in execution order so that gradients can be
/// propagated back through them in reverse.
pub struct Tape<T: Real = f32> {
    pub(crate) nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    consumed: bool,
    check_finite: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
            check_finite: cfg!(debug_assertions),
        }
    }

    /// Enables or disables the NaN/Inf guard on every recorded value.
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated into `v` by the last backward pass. Only leaves
    /// keep their gradients.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor<T>> {
        self.grad(v).map(|g| Tensor {
            shape: self.shape(v).to_vec(),
            data: g.to_vec(),
        })
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, inputs: &[Var], op: Op<T>, name: &'static str) -> Result<Var> {
        if self.check_finite && !value.all_finite() {
            return Err(Error::NonFinite(name));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Constant };
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Propagates d(loss)/d(node) to every node that requires gradients.
    /// Gradients accumulate additively over repeated uses of a value.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let shape = self.shape(loss);
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        self.consumed = true;
        let mut grads = Grads {
            slots: (0..self.nodes.len()).map(|_| None).collect(),
        };
        if !self.nodes[loss.0].requires_grad {
            self.grads = grads.slots;
            return Ok(());
        }
        grads.slots[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let g = match &self.nodes[i].op {
                Op::Leaf | Op::Constant => continue,
                _ => match grads.slots[i].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.backward_node(i, &g, &mut grads);
        }
        self.grads = grads.slots;
        Ok(())
    }

    fn backward_node(&self, i: usize, g: &[T], grads: &mut Grads<T>) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::Binary { kind, a, b } => self.binary_backward(*kind, *a, *b, i, g, grads),
            Op::Scale { a, factor } => {
                if let Some(ga) = grads.slot(self, *a) {
                    for (d, &x) in ga.iter_mut().zip(g) {
                        *d = *d + x * *factor;
                    }
                }
            }
            Op::AddScalar { a } | Op::Reshape { a } => {
                if let Some(ga) = grads.slot(self, *a) {
                    for (d, &x) in ga.iter_mut().zip(g) {
                        *d = *d + x;
                    }
                }
            }
            Op::Unary { kind, a } => self.unary_backward(*kind, *a, i, g, grads),
            Op::Pow { a, exponent } => self.pow_backward(*a, *exponent, g, grads),
            Op::MatMul { a, b } => self.matmul_backward(*a, *b, g, grads),
            Op::Reduce { kind, a, axes } => self.reduce_backward(*kind, *a, axes, i, g, grads),
            Op::Concat { inputs, axis } => self.concat_backward(inputs, *axis, i, g, grads),
            Op::Slice { a, axis, start } => self.slice_backward(*a, *axis, *start, i, g, grads),
            Op::Mask { a, mask } => {
                if let Some(ga) = grads.slot(self, *a) {
                    for ((d, &x), &m) in ga.iter_mut().zip(g).zip(mask) {
                        *d = *d + x * m;
                    }
                }
            }
            Op::Conv2d { x, w, b, stride, pad } => {
                self.conv2d_backward(*x, *w, *b, *stride, *pad, i, g, grads)
            }
            Op::MaxPool2 { x, argmax } => {
                if let Some(gx) = grads.slot(self, *x) {
                    for (&src, &d) in argmax.iter().zip(g) {
                        gx[src as usize] = gx[src as usize] + d;
                    }
                }
            }
            Op::Upsample2 { x } => self.upsample2_backward(*x, g, grads),
            Op::GlobalAvgPool { x } => self.global_avg_pool_backward(*x, g, grads),
            Op::BatchNorm {
                x,
                scale,
                shift,
                mean,
                inv_std,
                batch_stats,
            } => self.batch_norm_backward(*x, *scale, *shift, mean, inv_std, *batch_stats, g, grads),
            Op::AdaIn {
                x,
                mu,
                sigma,
                inst_mean,
                inst_std,
                eps,
            } => self.adain_backward(*x, *mu, *sigma, inst_mean, inst_std, *eps, g, grads),
            Op::Gather { table, rows } => {
                let width: usize = self.shape(*table)[1..].iter().product();
                if let Some(gt) = grads.slot(self, *table) {
                    for (r, &row) in rows.iter().enumerate() {
                        let dst = &mut gt[row * width..(row + 1) * width];
                        for (d, &x) in dst.iter_mut().zip(&g[r * width..(r + 1) * width]) {
                            *d = *d + x;
                        }
                    }
                }
            }
            Op::UnitNormalize { x, norms, eps } => self.unit_normalize_backward(*x, norms, *eps, i, g, grads),
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let classes = self.shape(*logits)[1];
                let scale = g[0] / T::c(labels.len() as f64);
                if let Some(gl) = grads.slot(self, *logits) {
                    for (n, &label) in labels.iter().enumerate() {
                        for k in 0..classes {
                            let target = if k == label { T::one() } else { T::zero() };
                            let idx = n * classes + k;
                            gl[idx] = gl[idx] + (probs[idx] - target) * scale;
                        }
                    }
                }
            }
        }
    }
}

/// Gradient buffers indexed by node, allocated on first write.
pub(crate) struct Grads<T> {
    slots: Vec<Option<Vec<T>>>,
}

impl<T: Real> Grads<T> {
    /// Mutable gradient buffer for `v`, or `None` when `v` needs no gradient.
    pub fn slot(&mut self, tape: &Tape<T>, v: Var) -> Option<&mut [T]> {
        let node = &tape.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        let n = node.value.numel();
        Some(self.slots[v.0].get_or_insert_with(|| vec![T::zero(); n]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64([2], &[1.0, 2.0]).unwrap(), true);
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn backward_twice_is_an_error() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::scalar(3.0), true);
        let y = tape.mul(x, x).unwrap();
        tape.backward(y).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::TapeConsumed)));
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64([1], &[3.0]).unwrap(), true);
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum_all(sq).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn reuse_accumulates() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64([3], &[1.0, -2.0, 5.0]).unwrap(), true);
        let twice = tape.add(x, x).unwrap();
        let loss = tape.sum_all(twice).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::scalar(0.0), true);
        let y = tape.sigmoid(x).unwrap();
        assert_eq!(tape.value(y).item(), 0.5);
        tape.backward(y).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.25]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let c = tape.constant(Tensor::scalar(2.0));
        let x = tape.leaf(Tensor::scalar(4.0), true);
        let y = tape.mul(c, x).unwrap();
        tape.backward(y).unwrap();
        assert!(tape.grad(c).is_none());
        assert_eq!(tape.grad(x).unwrap(), &[2.0]);
    }

    #[test]
    fn finite_guard_trips_when_enabled() {
        let mut tape = Tape::<f64>::new();
        tape.set_check_finite(true);
        let x = tape.leaf(Tensor::scalar(-1.0), true);
        assert!(matches!(tape.sqrt(x), Err(Error::NonFinite(_))));
    }
}
