//! Encoder, decoder, loss trunk and evaluation classifier.

mod classifier;
mod decoder;
mod encoder;
mod trunk;

pub use classifier::{Classifier, ClassifierConfig};
pub use decoder::{Conditioning, Decoder, DecoderConfig, ParamReport, SkipVariant};
pub use encoder::{Encoder, EncoderConfig, EncoderHead, EncoderOutput, LayerSpec, PoolMarker, SKIP_TAPS};
pub use trunk::{FeatureStack, TrunkConfig, TrunkConv, TrunkHead};

use crate::error::Result;

/// Class count of the full-scale dataset.
pub const FULL_SCALE_CLASSES: usize = 125;

/// Builds a decoder and reports its trainable parameters.
pub fn count_params(encoder: &EncoderConfig, decoder: &DecoderConfig, classes: usize) -> Result<ParamReport> {
    Ok(Decoder::<f32>::build(encoder, decoder, classes, 0)?.param_report())
}

/// Expected full-scale decoder totals for the four variants, checked by
/// the parameter band tests.
pub fn reference_total(config: &DecoderConfig) -> f64 {
    match (config.conditioning, config.skip) {
        (Conditioning::Batchnorm, SkipVariant::None) => 17.0e6,
        (Conditioning::Adain, SkipVariant::None) => 18.2e6,
        (_, SkipVariant::Skip1) => 19.2e6,
        (_, SkipVariant::Skip) => 21.3e6,
    }
}

/// The four decoder variants compared in the ablation, in table order.
pub fn ablation_variants() -> [(&'static str, DecoderConfig); 4] {
    let v = |conditioning, skip| DecoderConfig {
        conditioning,
        skip,
        out_channels: 1,
    };
    [
        ("plain", v(Conditioning::Batchnorm, SkipVariant::None)),
        ("adain", v(Conditioning::Adain, SkipVariant::None)),
        ("adain+skip1", v(Conditioning::Adain, SkipVariant::Skip1)),
        ("adain+skip", v(Conditioning::Adain, SkipVariant::Skip)),
    ]
}
