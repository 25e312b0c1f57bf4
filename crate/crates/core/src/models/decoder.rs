use serde::{Deserialize, Serialize};

use super::encoder::{EncoderConfig, EncoderOutput, SKIP_TAPS};
use crate::error::{invalid, mismatch, Result};
use crate::nn::{adain_site, BatchNorm2d, Bound, ClassEmbedding, ClassStats, Conv2d, ParamStore};
use crate::rng;
use crate::tensor::{Real, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Conditioning {
    Batchnorm,
    Adain,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkipVariant {
    None,
    /// Concatenate, then a 1x1 convolution back to the decoder width.
    Skip1,
    /// Concatenate and widen the next convolution's input.
    Skip,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderConfig {
    pub conditioning: Conditioning,
    pub skip: SkipVariant,
    pub out_channels: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            conditioning: Conditioning::Batchnorm,
            skip: SkipVariant::None,
            out_channels: 1,
        }
    }
}

#[derive(Clone, Debug)]
enum Norm {
    Batch(BatchNorm2d),
    Adain { offset: usize },
}

#[derive(Clone, Debug)]
struct Block {
    /// Channel count of the encoder tap joined after this block's upsample.
    tap: Option<usize>,
    adapter: Option<Conv2d>,
    layers: Vec<(Conv2d, Norm)>,
}

/// Trainable parameter counts by component.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamReport {
    pub decoder_convs: usize,
    pub norms: usize,
    pub embeddings: usize,
    pub skip: usize,
    pub total: usize,
}

/// Mirror of the encoder: bilinear upsample then convolutions per stage,
/// ending in a 1-channel sigmoid output.
pub struct Decoder<T: Real = f32> {
    pub config: DecoderConfig,
    pub params: ParamStore<T>,
    blocks: Vec<Block>,
    embedding: Option<ClassEmbedding>,
    out: Conv2d,
    report: ParamReport,
}

impl<T: Real> Decoder<T> {
    pub fn build(encoder: &EncoderConfig, config: &DecoderConfig, classes: usize, seed: u64) -> Result<Self> {
        let enc_blocks = encoder.blocks()?;
        if config.out_channels == 0 {
            return Err(invalid("decoder", "out_channels must be positive"));
        }
        if config.conditioning == Conditioning::Adain && classes == 0 {
            return Err(invalid("decoder", "AdaIN conditioning needs at least one class"));
        }
        let mut rng = rng::stream(seed, "decoder", 0);
        let mut params = ParamStore::new();
        let mut report = ParamReport::default();
        let mut in_ch = *enc_blocks.last().and_then(|b| b.last()).unwrap_or(&0);
        let mut offset = 0;
        let mut blocks = Vec::new();

        for (j, enc) in enc_blocks.iter().enumerate().rev() {
            let tap = (j < SKIP_TAPS && config.skip != SkipVariant::None).then(|| *enc.last().unwrap_or(&0));
            let mut adapter = None;
            let mut extra = 0;
            if let Some(t) = tap {
                match config.skip {
                    SkipVariant::Skip1 => {
                        let a = Conv2d::new(&mut params, &format!("decoder.{j}.skip1"), in_ch + t, in_ch, 1, &mut rng);
                        report.skip += a.param_count();
                        adapter = Some(a);
                    }
                    SkipVariant::Skip => extra = t,
                    SkipVariant::None => {}
                }
            }
            let mut layers = Vec::new();
            for (li, &out) in enc.iter().rev().enumerate() {
                let name = format!("decoder.{j}.{li}");
                let widen = if li == 0 { extra } else { 0 };
                let conv = Conv2d::new(&mut params, &format!("{name}.conv"), in_ch + widen, out, 3, &mut rng);
                report.skip += widen * out * 9;
                report.decoder_convs += conv.param_count() - widen * out * 9;
                let norm = match config.conditioning {
                    Conditioning::Batchnorm => {
                        let bn = BatchNorm2d::new(&mut params, &format!("{name}.bn"), out);
                        report.norms += bn.param_count();
                        Norm::Batch(bn)
                    }
                    Conditioning::Adain => {
                        let n = Norm::Adain { offset };
                        offset += out;
                        n
                    }
                };
                layers.push((conv, norm));
                in_ch = out;
            }
            blocks.push(Block { tap, adapter, layers });
        }
        let out = Conv2d::new(&mut params, "decoder.out", in_ch, config.out_channels, 3, &mut rng);
        report.decoder_convs += out.param_count();
        let embedding = (config.conditioning == Conditioning::Adain)
            .then(|| ClassEmbedding::new(&mut params, "decoder.embedding", classes, offset, &mut rng));
        if let Some(e) = &embedding {
            report.embeddings = e.param_count();
        }
        report.total = report.decoder_convs + report.norms + report.embeddings + report.skip;
        debug_assert_eq!(report.total, params.total_weights());
        Ok(Self {
            config: config.clone(),
            params,
            blocks,
            embedding,
            out,
            report,
        })
    }

    pub fn param_report(&self) -> ParamReport {
        self.report
    }

    pub fn embedding(&self) -> Option<&ClassEmbedding> {
        self.embedding.as_ref()
    }

    /// Number of channels passed through a normalization layer.
    pub fn normalized_channels(&self) -> usize {
        self.blocks.iter().flat_map(|b| &b.layers).map(|(c, _)| c.out_ch).sum()
    }

    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        b: &mut Bound<T>,
        enc: &EncoderOutput,
        class_ids: Option<&[usize]>,
    ) -> Result<Var> {
        let stats: Option<ClassStats> = match (&self.embedding, class_ids) {
            (Some(e), Some(ids)) => {
                let n = tape.shape(enc.bottleneck)[0];
                if ids.len() != n {
                    return Err(mismatch("decode", &[n], &[ids.len()]));
                }
                Some(e.lookup(tape, b, ids)?)
            }
            (Some(_), None) => return Err(invalid("decode", "class ids are required for AdaIN conditioning")),
            (None, _) => None,
        };
        let mut x = enc.bottleneck;
        for (k, block) in self.blocks.iter().enumerate() {
            x = tape.upsample2(x)?;
            if block.tap.is_some() {
                let j = self.blocks.len() - 1 - k;
                let tap = *enc
                    .taps
                    .get(j)
                    .ok_or_else(|| invalid("decode", "encoder taps are required for skip connections"))?;
                x = tape.concat(&[x, tap], 1)?;
                if let Some(a) = &block.adapter {
                    x = a.forward(tape, b, x)?;
                }
            }
            for (conv, norm) in &block.layers {
                x = conv.forward(tape, b, x)?;
                x = match norm {
                    Norm::Batch(bn) => bn.forward(tape, b, x)?,
                    Norm::Adain { offset } => adain_site(tape, stats.expect("checked above"), *offset, x)?,
                };
                x = tape.relu(x)?;
            }
        }
        let y = self.out.forward(tape, b, x)?;
        tape.sigmoid(y)
    }
}
