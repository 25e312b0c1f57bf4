use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Result};
use crate::nn::{BatchNorm2d, Bound, Conv2d, Linear, ParamStore};
use crate::rng;
use crate::tensor::{Real, Tape, Var};

/// Residual sketch classifier used only for scoring generations.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub in_channels: usize,
    pub input_size: usize,
    /// Width of each stage; stages after the first start with a pool.
    pub widths: Vec<usize>,
}

impl ClassifierConfig {
    pub fn desk_scale() -> Self {
        Self {
            in_channels: 1,
            input_size: 32,
            widths: vec![16, 32, 64],
        }
    }
}

struct ConvBn {
    conv: Conv2d,
    bn: BatchNorm2d,
}

impl ConvBn {
    fn new<T: Real>(p: &mut ParamStore<T>, name: &str, i: usize, o: usize, rng: &mut rng::Rng) -> Self {
        Self {
            conv: Conv2d::new(p, &format!("{name}.conv"), i, o, 3, rng),
            bn: BatchNorm2d::new(p, &format!("{name}.bn"), o),
        }
    }

    fn forward<T: Real>(&self, tape: &mut Tape<T>, b: &mut Bound<T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(tape, b, x)?;
        self.bn.forward(tape, b, y)
    }
}

struct Stage {
    entry: ConvBn,
    res_a: ConvBn,
    res_b: ConvBn,
}

pub struct Classifier<T: Real = f32> {
    pub config: ClassifierConfig,
    pub params: ParamStore<T>,
    stages: Vec<Stage>,
    fc: Linear,
}

impl<T: Real> Classifier<T> {
    pub fn build(config: &ClassifierConfig, classes: usize, seed: u64) -> Result<Self> {
        if config.widths.is_empty() || config.widths.contains(&0) || classes == 0 {
            return Err(invalid("classifier", "widths and class count must be positive"));
        }
        if config.input_size % (1 << (config.widths.len() - 1)) != 0 {
            return Err(invalid("classifier", "input size does not survive the pooling stages"));
        }
        let mut rng = rng::stream(seed, "classifier", 0);
        let mut params = ParamStore::new();
        let mut in_ch = config.in_channels;
        let mut stages = Vec::new();
        for (i, &w) in config.widths.iter().enumerate() {
            let name = format!("classifier.{i}");
            stages.push(Stage {
                entry: ConvBn::new(&mut params, &format!("{name}.entry"), in_ch, w, &mut rng),
                res_a: ConvBn::new(&mut params, &format!("{name}.res_a"), w, w, &mut rng),
                res_b: ConvBn::new(&mut params, &format!("{name}.res_b"), w, w, &mut rng),
            });
            in_ch = w;
        }
        let fc = Linear::new(&mut params, "classifier.fc", in_ch, classes, &mut rng);
        Ok(Self {
            config: config.clone(),
            params,
            stages,
            fc,
        })
    }

    pub fn classes(&self) -> usize {
        self.fc.outputs
    }

    /// Class scores `[N, classes]`.
    pub fn forward(&self, tape: &mut Tape<T>, b: &mut Bound<T>, x: Var) -> Result<Var> {
        let shape = tape.shape(x);
        let want = [self.config.in_channels, self.config.input_size, self.config.input_size];
        if shape.len() != 4 || shape[1..] != want {
            return Err(mismatch("classifier", shape, &want));
        }
        let mut h = x;
        for (i, s) in self.stages.iter().enumerate() {
            if i > 0 {
                h = tape.maxpool2(h)?;
            }
            h = s.entry.forward(tape, b, h)?;
            h = tape.relu(h)?;
            let mut r = s.res_a.forward(tape, b, h)?;
            r = tape.relu(r)?;
            r = s.res_b.forward(tape, b, r)?;
            h = tape.add(h, r)?;
            h = tape.relu(h)?;
        }
        let pooled = tape.global_avg_pool(h)?;
        self.fc.forward(tape, b, pooled)
    }
}
