use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Result};
use crate::nn::{dropout, Bound, Conv2d, Linear, Mode, ParamStore};
use crate::rng::{self, Rng};
use crate::tensor::{Real, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrunkConv {
    pub out: usize,
    pub kernel: usize,
    pub pool: bool,
}

/// AlexNet-style sketch classifier: five convolutions, then a
/// fully-connected head with dropout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrunkConfig {
    pub in_channels: usize,
    pub input_size: usize,
    pub convs: Vec<TrunkConv>,
    pub hidden: usize,
    pub dropout: f64,
}

impl TrunkConfig {
    pub fn desk_scale() -> Self {
        let c = |out, kernel, pool| TrunkConv { out, kernel, pool };
        Self {
            in_channels: 1,
            input_size: 32,
            convs: vec![c(16, 5, true), c(32, 5, true), c(48, 3, false), c(48, 3, false), c(32, 3, true)],
            hidden: 128,
            dropout: 0.5,
        }
    }

    fn validate(&self) -> Result<usize> {
        if self.convs.len() != 5 {
            return Err(invalid("trunk", format!("expected 5 convolutions, got {}", self.convs.len())));
        }
        let mut s = self.input_size;
        for c in &self.convs {
            if c.out == 0 || c.kernel % 2 == 0 {
                return Err(invalid("trunk", "convolutions need a positive width and an odd kernel"));
            }
            if c.pool {
                if s % 2 != 0 {
                    return Err(invalid("trunk", format!("cannot pool a {s}x{s} map")));
                }
                s /= 2;
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(invalid("trunk", "dropout must lie in [0, 1)"));
        }
        Ok(s)
    }
}

/// The convolutional part. Kept in its own store so it can be frozen and
/// reused for the loss once the head is dropped.
pub struct FeatureStack<T: Real = f32> {
    pub config: TrunkConfig,
    pub params: ParamStore<T>,
    convs: Vec<Conv2d>,
}

pub struct TrunkHead<T: Real = f32> {
    pub params: ParamStore<T>,
    fc1: Linear,
    fc2: Linear,
    dropout: f64,
}

impl<T: Real> FeatureStack<T> {
    pub fn build(config: &TrunkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, "trunk", 0);
        let mut params = ParamStore::new();
        let mut in_ch = config.in_channels;
        let convs = config
            .convs
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let conv = Conv2d::new(&mut params, &format!("trunk.conv{}", i + 1), in_ch, c.out, c.kernel, &mut rng);
                in_ch = c.out;
                conv
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            params,
            convs,
        })
    }

    pub fn freeze(&mut self) {
        self.params.freeze();
    }

    pub fn depth(&self) -> usize {
        self.convs.len()
    }

    /// Post-ReLU activations of every convolution, plus the final pooled map.
    pub fn forward(&self, tape: &mut Tape<T>, b: &mut Bound<T>, x: Var) -> Result<(Vec<Var>, Var)> {
        let shape = tape.shape(x);
        let want = [self.config.in_channels, self.config.input_size, self.config.input_size];
        if shape.len() != 4 || shape[1..] != want {
            return Err(mismatch("trunk", shape, &want));
        }
        let mut acts = Vec::with_capacity(self.convs.len());
        let mut h = x;
        for (conv, spec) in self.convs.iter().zip(&self.config.convs) {
            h = conv.forward(tape, b, h)?;
            h = tape.relu(h)?;
            acts.push(h);
            if spec.pool {
                h = tape.maxpool2(h)?;
            }
        }
        Ok((acts, h))
    }

    /// Activations with the parameters held constant.
    pub fn features(&self, tape: &mut Tape<T>, x: Var) -> Result<Vec<Var>> {
        let mut b = Bound::new(&self.params, Mode::Eval, false);
        Ok(self.forward(tape, &mut b, x)?.0)
    }
}

impl<T: Real> TrunkHead<T> {
    pub fn build(config: &TrunkConfig, classes: usize, seed: u64) -> Result<Self> {
        let s = config.validate()?;
        let c = config.convs.last().map_or(0, |c| c.out);
        let mut rng = rng::stream(seed, "trunk-head", 0);
        let mut params = ParamStore::new();
        let fc1 = Linear::new(&mut params, "trunk_head.fc1", c * s * s, config.hidden, &mut rng);
        let fc2 = Linear::new(&mut params, "trunk_head.fc2", config.hidden, classes, &mut rng);
        Ok(Self {
            params,
            fc1,
            fc2,
            dropout: config.dropout,
        })
    }

    pub fn forward(&self, tape: &mut Tape<T>, b: &mut Bound<T>, pooled: Var, rng: &mut Rng) -> Result<Var> {
        let train = b.mode == Mode::Train;
        let n = tape.shape(pooled)[0];
        let mut h = tape.reshape(pooled, &[n, self.fc1.inputs])?;
        h = dropout(tape, h, self.dropout, train, rng)?;
        h = self.fc1.forward(tape, b, h)?;
        h = tape.relu(h)?;
        h = dropout(tape, h, self.dropout, train, rng)?;
        self.fc2.forward(tape, b, h)
    }
}
