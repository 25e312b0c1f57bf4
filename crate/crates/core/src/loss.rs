//! Deep perceptual similarity and the pixelwise baseline.

use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Result};
use crate::models::FeatureStack;
use crate::tensor::{Real, Tape, Var};

pub const UNIT_NORM_EPS: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Psim,
    Mse,
}

/// Which trunk activations enter the distance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActivationPoint {
    PostRelu,
}

fn same_shape<T: Real>(tape: &Tape<T>, op: &'static str, a: Var, b: Var) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(mismatch(op, tape.shape(a), tape.shape(b)));
    }
    Ok(())
}

/// Distance between two sets of activations: per layer, channel vectors are
/// unit-normalized, squared differences are summed over channels and
/// averaged over positions; layers are summed. Returns one value per sample.
pub fn feature_distance<T: Real>(tape: &mut Tape<T>, a: &[Var], b: &[Var]) -> Result<Var> {
    let mut total: Option<Var> = None;
    for (&fa, &fb) in a.iter().zip(b) {
        same_shape(tape, "psim", fa, fb)?;
        let ua = tape.unit_normalize(fa, UNIT_NORM_EPS)?;
        let ub = tape.unit_normalize(fb, UNIT_NORM_EPS)?;
        let d = tape.sub(ua, ub)?;
        let sq = tape.mul(d, d)?;
        let per_pos = tape.sum(sq, &[1], false)?;
        let per_sample = tape.mean(per_pos, &[1, 2], false)?;
        total = Some(match total {
            Some(t) => tape.add(t, per_sample)?,
            None => per_sample,
        });
    }
    total.ok_or_else(|| crate::error::invalid("psim", "no layers"))
}

/// Per-sample perceptual distance `[N]` between sketches `x` and `target`.
pub fn psim_per_sample<T: Real>(tape: &mut Tape<T>, trunk: &FeatureStack<T>, x: Var, target: Var) -> Result<Var> {
    same_shape(tape, "psim", x, target)?;
    let fx = trunk.features(tape, x)?;
    let ft = trunk.features(tape, target)?;
    feature_distance(tape, &fx, &ft)
}

/// Batch mean of [`psim_per_sample`].
pub fn psim<T: Real>(tape: &mut Tape<T>, trunk: &FeatureStack<T>, x: Var, target: Var) -> Result<Var> {
    let d = psim_per_sample(tape, trunk, x, target)?;
    tape.mean_all(d)
}

pub fn mse<T: Real>(tape: &mut Tape<T>, x: Var, target: Var) -> Result<Var> {
    same_shape(tape, "mse", x, target)?;
    let d = tape.sub(x, target)?;
    let sq = tape.mul(d, d)?;
    tape.mean_all(sq)
}

pub fn loss<T: Real>(
    tape: &mut Tape<T>,
    kind: LossKind,
    trunk: Option<&FeatureStack<T>>,
    x: Var,
    target: Var,
) -> Result<Var> {
    match (kind, trunk) {
        (LossKind::Mse, _) => mse(tape, x, target),
        (LossKind::Psim, Some(t)) => psim(tape, t, x, target),
        (LossKind::Psim, None) => Err(crate::error::invalid("loss", "perceptual loss needs a trunk")),
    }
}
