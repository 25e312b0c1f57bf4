use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Result};
use crate::nn::{BatchNorm2d, Bound, Conv2d, Linear, Mode, ParamStore};
use crate::rng;
use crate::tensor::{Real, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PoolMarker {
    M,
}

/// One entry of a VGG-style schedule: a 3x3 convolution width or a pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LayerSpec {
    Conv(usize),
    Pool(PoolMarker),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub in_channels: usize,
    pub input_size: usize,
    pub schedule: Vec<LayerSpec>,
}

pub const SKIP_TAPS: usize = 4;

fn parse_schedule(s: &str) -> Vec<LayerSpec> {
    s.split(',')
        .map(|t| match t {
            "M" => LayerSpec::Pool(PoolMarker::M),
            n => LayerSpec::Conv(n.parse().expect("static schedule")),
        })
        .collect()
}

impl EncoderConfig {
    /// VGG16-BN on 224x224 RGB.
    pub fn full_scale() -> Self {
        Self {
            in_channels: 3,
            input_size: 224,
            schedule: parse_schedule("64,64,M,128,128,M,256,256,256,M,512,512,512,M,512,512,512,M"),
        }
    }

    pub fn desk_scale() -> Self {
        Self {
            in_channels: 3,
            input_size: 32,
            schedule: parse_schedule("16,16,M,32,32,M,64,64,M,128,128,M,128,128,M"),
        }
    }

    /// Convolution widths grouped by pooling stage.
    pub fn blocks(&self) -> Result<Vec<Vec<usize>>> {
        let mut blocks = Vec::new();
        let mut cur = Vec::new();
        for s in &self.schedule {
            match *s {
                LayerSpec::Conv(0) => return Err(invalid("encoder", "zero-width convolution")),
                LayerSpec::Conv(c) => cur.push(c),
                LayerSpec::Pool(_) => {
                    if cur.is_empty() {
                        return Err(invalid("encoder", "pool without a preceding convolution"));
                    }
                    blocks.push(std::mem::take(&mut cur));
                }
            }
        }
        if !cur.is_empty() {
            return Err(invalid("encoder", "schedule must end with a pool"));
        }
        if blocks.len() != SKIP_TAPS + 1 {
            return Err(invalid(
                "encoder",
                format!("expected {} pooling stages, got {}", SKIP_TAPS + 1, blocks.len()),
            ));
        }
        if self.in_channels == 0 || self.input_size % (1 << blocks.len()) != 0 {
            return Err(invalid(
                "encoder",
                format!("input size {} not divisible by 2^{}", self.input_size, blocks.len()),
            ));
        }
        Ok(blocks)
    }

    pub fn bottleneck_shape(&self) -> Result<[usize; 3]> {
        let blocks = self.blocks()?;
        let c = *blocks.last().and_then(|b| b.last()).unwrap_or(&0);
        let s = self.input_size >> blocks.len();
        Ok([c, s, s])
    }

    /// `[C, H, W]` of the four skip taps, shallowest first.
    pub fn tap_shapes(&self) -> Result<Vec<[usize; 3]>> {
        let blocks = self.blocks()?;
        Ok(blocks[..SKIP_TAPS]
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let s = self.input_size >> i;
                [*b.last().unwrap_or(&0), s, s]
            })
            .collect())
    }
}

pub struct EncoderOutput {
    pub bottleneck: Var,
    /// Pre-pool activations of the first four stages, shallowest first.
    pub taps: Vec<Var>,
}

/// VGG-style conv/BN/ReLU stack with a pool after every stage.
pub struct Encoder<T: Real = f32> {
    pub config: EncoderConfig,
    pub params: ParamStore<T>,
    stages: Vec<Vec<(Conv2d, BatchNorm2d)>>,
}

impl<T: Real> Encoder<T> {
    pub fn build(config: &EncoderConfig, seed: u64) -> Result<Self> {
        let blocks = config.blocks()?;
        let mut rng = rng::stream(seed, "encoder", 0);
        let mut params = ParamStore::new();
        let mut in_ch = config.in_channels;
        let mut stages = Vec::new();
        for (bi, block) in blocks.iter().enumerate() {
            let mut layers = Vec::new();
            for (li, &out) in block.iter().enumerate() {
                let name = format!("encoder.{bi}.{li}");
                let conv = Conv2d::new(&mut params, &format!("{name}.conv"), in_ch, out, 3, &mut rng);
                let bn = BatchNorm2d::new(&mut params, &format!("{name}.bn"), out);
                layers.push((conv, bn));
                in_ch = out;
            }
            stages.push(layers);
        }
        Ok(Self {
            config: config.clone(),
            params,
            stages,
        })
    }

    pub fn freeze(&mut self) {
        self.params.freeze();
    }

    pub fn forward(&self, tape: &mut Tape<T>, b: &mut Bound<T>, image: Var) -> Result<EncoderOutput> {
        let shape = tape.shape(image);
        let want = [self.config.in_channels, self.config.input_size, self.config.input_size];
        if shape.len() != 4 || shape[1..] != want {
            return Err(mismatch("encode", shape, &want));
        }
        let mut x = image;
        let mut taps = Vec::new();
        for stage in &self.stages {
            for (conv, bn) in stage {
                x = conv.forward(tape, b, x)?;
                x = bn.forward(tape, b, x)?;
                x = tape.relu(x)?;
            }
            if taps.len() < SKIP_TAPS {
                taps.push(x);
            }
            x = tape.maxpool2(x)?;
        }
        Ok(EncoderOutput { bottleneck: x, taps })
    }

    /// Inference-mode forward pass with the parameters held constant.
    pub fn encode(&self, tape: &mut Tape<T>, image: Var) -> Result<EncoderOutput> {
        let mut b = Bound::new(&self.params, Mode::Eval, false);
        self.forward(tape, &mut b, image)
    }
}

/// Linear classifier on the flattened bottleneck, used only while the
/// encoder is being pretrained.
pub struct EncoderHead<T: Real = f32> {
    pub params: ParamStore<T>,
    pub fc: Linear,
}

impl<T: Real> EncoderHead<T> {
    pub fn build(config: &EncoderConfig, classes: usize, seed: u64) -> Result<Self> {
        let [c, h, w] = config.bottleneck_shape()?;
        let mut rng = rng::stream(seed, "encoder-head", 0);
        let mut params = ParamStore::new();
        let fc = Linear::new(&mut params, "encoder_head.fc", c * h * w, classes, &mut rng);
        Ok(Self { params, fc })
    }

    pub fn forward(&self, tape: &mut Tape<T>, b: &mut Bound<T>, bottleneck: Var) -> Result<Var> {
        let n = tape.shape(bottleneck)[0];
        let flat = tape.reshape(bottleneck, &[n, self.fc.inputs])?;
        self.fc.forward(tape, b, flat)
    }
}
