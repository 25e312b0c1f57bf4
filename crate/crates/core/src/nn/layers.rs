use rand::Rng as _;

use super::params::{Bound, Mode, ParamId, ParamKind, ParamStore, PendingStats};
use crate::error::{invalid, mismatch, Result};
use crate::rng::Rng;
use crate::tensor::{Real, Tape, Tensor, Var};

/// Uniform in `[-b, b]` with `b = sqrt(6 / fan_in)` (gain for ReLU).
pub fn kaiming_uniform<T: Real>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor<T> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape.to_vec(), |_| T::c(rng.gen_range(-bound..=bound)))
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    /// Square kernel, "same" padding for odd kernels at stride 1.
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        rng: &mut Rng,
    ) -> Self {
        Self::with_geometry(store, name, in_ch, out_ch, kernel, 1, kernel / 2, rng)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_geometry<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        let w = kaiming_uniform(&[out_ch, in_ch, kernel, kernel], fan_in, rng);
        let weight = store.add(format!("{name}.weight"), w, ParamKind::Weight);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros([out_ch]), ParamKind::Weight);
        Self {
            weight,
            bias,
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
        }
    }

    pub fn param_count(&self) -> usize {
        self.out_ch * self.in_ch * self.kernel * self.kernel + self.out_ch
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, b: &mut Bound<T>, x: Var) -> Result<Var> {
        let w = b.var(tape, self.weight);
        let bias = b.var(tape, self.bias);
        tape.conv2d(x, w, Some(bias), self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub scale: ParamId,
    pub shift: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm2d {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        Self {
            scale: store.add(format!("{name}.scale"), Tensor::full([channels], T::one()), ParamKind::Weight),
            shift: store.add(format!("{name}.shift"), Tensor::zeros([channels]), ParamKind::Weight),
            running_mean: store.add(format!("{name}.running_mean"), Tensor::zeros([channels]), ParamKind::Buffer),
            running_var: store.add(
                format!("{name}.running_var"),
                Tensor::full([channels], T::one()),
                ParamKind::Buffer,
            ),
            channels,
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, b: &mut Bound<T>, x: Var) -> Result<Var> {
        let scale = b.var(tape, self.scale);
        let shift = b.var(tape, self.shift);
        match b.mode {
            Mode::Eval => {
                let store = b.store();
                let mean = store.get(self.running_mean).data();
                let var = store.get(self.running_var).data();
                tape.batch_norm_inference(x, scale, shift, mean, var, self.eps)
            }
            Mode::Train => {
                let (y, stats) = tape.batch_norm_train(x, scale, shift, self.eps)?;
                b.pending.push(PendingStats {
                    mean: self.running_mean,
                    var: self.running_var,
                    stats,
                    momentum: self.momentum,
                });
                Ok(y)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let w = kaiming_uniform(&[inputs, outputs], inputs, rng);
        Self {
            weight: store.add(format!("{name}.weight"), w, ParamKind::Weight),
            bias: store.add(format!("{name}.bias"), Tensor::zeros([outputs]), ParamKind::Weight),
            inputs,
            outputs,
        }
    }

    pub fn param_count(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }

    /// `x [N, inputs] -> [N, outputs]`
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, b: &mut Bound<T>, x: Var) -> Result<Var> {
        let w = b.var(tape, self.weight);
        let bias = b.var(tape, self.bias);
        let y = tape.matmul(x, w)?;
        tape.add(y, bias)
    }
}

/// Raw sigma value whose softplus is one.
pub const SIGMA_RAW_UNIT: f64 = 0.541_324_854_612_918_1;

/// Learned per-class target statistics for AdaIN. Columns are laid out by
/// normalization site; `sigma_raw` passes through softplus when applied.
#[derive(Clone, Debug)]
pub struct ClassEmbedding {
    pub mu: ParamId,
    pub sigma_raw: ParamId,
    pub classes: usize,
    pub width: usize,
}

/// Gathered embedding rows for one batch.
#[derive(Clone, Copy, Debug)]
pub struct ClassStats {
    pub mu: Var,
    pub sigma: Var,
}

impl ClassEmbedding {
    /// Applied sigma starts at one and mu at zero, plus small distinct noise
    /// per class so that conditioning differs from the first step.
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, classes: usize, width: usize, rng: &mut Rng) -> Self {
        let noise = 0.05;
        let mu = Tensor::from_fn([classes, width], |_| T::c(rng.gen_range(-noise..=noise)));
        let sigma = Tensor::from_fn([classes, width], |_| T::c(SIGMA_RAW_UNIT + rng.gen_range(-noise..=noise)));
        Self {
            mu: store.add(format!("{name}.mu"), mu, ParamKind::Weight),
            sigma_raw: store.add(format!("{name}.sigma"), sigma, ParamKind::Weight),
            classes,
            width,
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.classes * self.width
    }

    pub fn lookup<T: Real>(&self, tape: &mut Tape<T>, b: &mut Bound<T>, class_ids: &[usize]) -> Result<ClassStats> {
        let mu = b.var(tape, self.mu);
        let raw = b.var(tape, self.sigma_raw);
        let mu = tape.gather_rows(mu, class_ids)?;
        let raw = tape.gather_rows(raw, class_ids)?;
        let sigma = tape.softplus(raw)?;
        Ok(ClassStats { mu, sigma })
    }
}

/// AdaIN at one decoder site: takes columns `offset..offset + channels` of
/// the gathered class statistics.
pub fn adain_site<T: Real>(tape: &mut Tape<T>, stats: ClassStats, offset: usize, x: Var) -> Result<Var> {
    let c = tape.shape(x).get(1).copied().unwrap_or(0);
    let width = tape.shape(stats.mu)[1];
    if offset + c > width {
        return Err(mismatch("adain_site", &[offset, c], &[width]));
    }
    let mu = tape.slice(stats.mu, 1, offset, c)?;
    let sigma = tape.slice(stats.sigma, 1, offset, c)?;
    tape.adain(x, mu, sigma, ADAIN_EPS)
}

pub const ADAIN_EPS: f64 = 1e-5;

/// Inverted dropout. Identity outside training or at rate zero.
pub fn dropout<T: Real>(tape: &mut Tape<T>, x: Var, rate: f64, training: bool, rng: &mut Rng) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(invalid("dropout", format!("rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok(x);
    }
    let keep = T::c(1.0 / (1.0 - rate));
    let n = tape.value(x).numel();
    let mask = (0..n)
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect();
    tape.mask(x, mask)
}
