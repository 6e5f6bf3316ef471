//! Segmentation losses.
//!
//! `BCE` is the mean binary cross-entropy over every pixel of the batch.
//! `DICE` is `1 − (2·Σpt + 1)/(Σp + Σt + 1)` over the whole batch.
//! `BCE_PLUS_DICE` is their sum.

use serde::{Deserialize, Serialize};

use super::tensor::{sigmoid, softplus, Real, Tensor};
use crate::error::{Error, Result};

/// Smoothing term of the Dice ratio.
pub const DICE_SMOOTH: f64 = 1.0;

/// Probabilities are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]` before taking
/// logarithms.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "BCE")]
    Bce,
    #[serde(rename = "DICE")]
    Dice,
    #[serde(rename = "BCE_PLUS_DICE")]
    BcePlusDice,
}

impl LossKind {
    fn uses_bce(self) -> bool {
        matches!(self, LossKind::Bce | LossKind::BcePlusDice)
    }

    fn uses_dice(self) -> bool {
        matches!(self, LossKind::Dice | LossKind::BcePlusDice)
    }
}

fn check_shapes<T: Real>(pred: &[Tensor<T>], target: &[Tensor<T>]) -> Result<usize> {
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} targets",
            pred.len(),
            target.len()
        )));
    }
    let mut n = 0;
    for (i, (p, t)) in pred.iter().zip(target).enumerate() {
        if !p.same_shape(t) {
            return Err(Error::ShapeMismatch(format!("sample {i}: prediction and target shapes differ")));
        }
        n += p.data.len();
    }
    if n == 0 {
        return Err(Error::ShapeMismatch("empty batch".into()));
    }
    Ok(n)
}

fn dice_from_sums(intersection: f64, total: f64) -> f64 {
    1.0 - (2.0 * intersection + DICE_SMOOTH) / (total + DICE_SMOOTH)
}

/// Loss of probability maps against `{0,1}` targets.
pub fn loss<T: Real>(pred: &[Tensor<T>], target: &[Tensor<T>], kind: LossKind) -> Result<f64> {
    let n = check_shapes(pred, target)?;
    let mut bce = 0.0;
    let (mut inter, mut total) = (0.0, 0.0);
    for (p, t) in pred.iter().zip(target) {
        for (&pv, &tv) in p.data.iter().zip(&t.data) {
            let (pv, tv) = (pv.as_f64(), tv.as_f64());
            if kind.uses_bce() {
                let pc = pv.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                bce -= tv * pc.ln() + (1.0 - tv) * (1.0 - pc).ln();
            }
            inter += pv * tv;
            total += pv + tv;
        }
    }
    let mut out = 0.0;
    if kind.uses_bce() {
        out += bce / n as f64;
    }
    if kind.uses_dice() {
        out += dice_from_sums(inter, total);
    }
    Ok(out)
}

/// Loss evaluated from logits, plus its gradient with respect to each logit.
///
/// BCE is computed as `softplus(z) − t·z`, which equals the clamped
/// probability form away from saturation and stays finite for large `|z|`.
pub fn loss_with_logit_grad<T: Real>(
    logits: &[Tensor<T>],
    target: &[Tensor<T>],
    kind: LossKind,
) -> Result<(f64, Vec<Tensor<T>>)> {
    let n = check_shapes(logits, target)?;
    let inv_n = 1.0 / n as f64;
    let mut bce = 0.0;
    let (mut inter, mut total) = (0.0, 0.0);
    for (z, t) in logits.iter().zip(target) {
        for (&zv, &tv) in z.data.iter().zip(&t.data) {
            let (zv, tv) = (zv.as_f64(), tv.as_f64());
            let pv = sigmoid(zv);
            if kind.uses_bce() {
                bce += softplus(zv) - tv * zv;
            }
            inter += pv * tv;
            total += pv + tv;
        }
    }
    let mut value = 0.0;
    if kind.uses_bce() {
        value += bce * inv_n;
    }
    let denom = total + DICE_SMOOTH;
    let numer = 2.0 * inter + DICE_SMOOTH;
    if kind.uses_dice() {
        value += dice_from_sums(inter, total);
    }
    let grads = logits
        .iter()
        .zip(target)
        .map(|(z, t)| {
            let data = z
                .data
                .iter()
                .zip(&t.data)
                .map(|(&zv, &tv)| {
                    let (zv, tv) = (zv.as_f64(), tv.as_f64());
                    let pv = sigmoid(zv);
                    let mut g = 0.0;
                    if kind.uses_bce() {
                        g += (pv - tv) * inv_n;
                    }
                    if kind.uses_dice() {
                        let dp = -(2.0 * tv * denom - numer) / (denom * denom);
                        g += dp * pv * (1.0 - pv);
                    }
                    T::from_f64(g)
                })
                .collect();
            Tensor::from_vec(z.channels, z.height, z.width, data)
        })
        .collect();
    Ok((value, grads))
}
