//! Run configuration: one JSON document, every field explicit.

use serde::{Deserialize, Serialize};

use crate::data::{AugmentSpec, DataConfig, ImageJitter};
use crate::error::{Error, Result};
use crate::loss::{ActivationPoint, LossKind};
use crate::models::{ClassifierConfig, DecoderConfig, EncoderConfig, TrunkConfig};
use crate::train::AdamConfig;

/// Supervised classifier training schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseConfig {
    pub seed: u64,
    pub max_epochs: usize,
    /// Stop once held-out accuracy has not improved for this many epochs.
    pub patience: usize,
    pub batch_size: usize,
    pub train_ratio: f64,
    pub adam: AdamConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSection {
    pub model: EncoderConfig,
    pub pretrain: PhaseConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoderSection {
    pub model: DecoderConfig,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSection {
    pub kind: LossKind,
    pub activations: ActivationPoint,
    pub trunk: TrunkConfig,
    pub augment: AugmentSpec,
    pub pretrain: PhaseConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub seed: u64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub flip: bool,
    pub jitter: ImageJitter,
    pub adam: AdamConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub classifier: ClassifierConfig,
    pub augment: AugmentSpec,
    pub pretrain: PhaseConfig,
    pub topk: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub encoder: EncoderSection,
    pub decoder: DecoderSection,
    pub loss: LossSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

fn phase(seed: u64, max_epochs: usize, train_ratio: f64, lr: f64) -> PhaseConfig {
    PhaseConfig {
        seed,
        max_epochs,
        patience: 20,
        batch_size: 32,
        train_ratio,
        adam: AdamConfig::with_lr(lr),
    }
}

impl RunConfig {
    /// Desk-scale defaults: 8 classes at 32x32 with the full architecture.
    pub fn desk_scale() -> Self {
        Self {
            data: DataConfig::desk_scale(),
            encoder: EncoderSection {
                model: EncoderConfig::desk_scale(),
                pretrain: phase(11, 12, 0.9, 1e-3),
            },
            decoder: DecoderSection {
                model: crate::models::ablation_variants()[3].1.clone(),
                seed: 0,
            },
            loss: LossSection {
                kind: LossKind::Psim,
                activations: ActivationPoint::PostRelu,
                trunk: TrunkConfig::desk_scale(),
                augment: AugmentSpec::sketch_default(),
                pretrain: phase(12, 8, 0.8, 1e-3),
            },
            train: TrainSection {
                seed: 0,
                max_epochs: 12,
                patience: 20,
                batch_size: 32,
                flip: true,
                jitter: ImageJitter::default_ten_percent(),
                adam: AdamConfig::with_lr(1e-3),
            },
            eval: EvalSection {
                classifier: ClassifierConfig::desk_scale(),
                augment: AugmentSpec::sketch_default(),
                pretrain: phase(13, 6, 0.8, 1e-3),
                topk: vec![1, 5],
            },
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sorted keys, two-space indent, trailing newline.
    pub fn to_canonical_json(&self) -> String {
        let v = serde_json::to_value(self).expect("config serializes");
        let mut s = serde_json::to_string_pretty(&v).expect("value serializes");
        s.push('\n');
        s
    }

    /// CRC-32 of the canonical form.
    pub fn hash(&self) -> u32 {
        crc32fast::hash(self.to_canonical_json().as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        crate::data::validate(&self.data).map_err(|e| Error::Config(e.to_string()))?;
        self.encoder.model.blocks().map_err(|e| Error::Config(e.to_string()))?;
        if self.encoder.model.input_size != self.data.size {
            return cfg(format!(
                "encoder.model.input_size {} differs from data.size {}",
                self.encoder.model.input_size, self.data.size
            ));
        }
        if self.loss.trunk.input_size != self.data.size || self.eval.classifier.input_size != self.data.size {
            return cfg("trunk and classifier input sizes must equal data.size".into());
        }
        for (name, p) in [
            ("encoder.pretrain", &self.encoder.pretrain),
            ("loss.pretrain", &self.loss.pretrain),
            ("eval.pretrain", &self.eval.pretrain),
        ] {
            if p.batch_size == 0 || p.max_epochs == 0 || !(p.train_ratio > 0.0 && p.train_ratio < 1.0) {
                return cfg(format!("{name}: batch_size and max_epochs must be positive, train_ratio in (0, 1)"));
            }
            check_adam(name, &p.adam)?;
        }
        if self.train.batch_size == 0 || self.train.max_epochs == 0 {
            return cfg("train: batch_size and max_epochs must be positive".into());
        }
        check_adam("train", &self.train.adam)?;
        if self.eval.topk.is_empty() || self.eval.topk.iter().any(|&k| k == 0) {
            return cfg("eval.topk must list positive k values".into());
        }
        Ok(())
    }
}

fn check_adam(name: &str, a: &AdamConfig) -> Result<()> {
    let ok = a.lr > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0;
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("{name}.adam: lr, eps > 0 and betas in [0, 1) required")))
    }
}
