//! Pixel-level confusion counts and the metrics derived from them.

use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::BinaryMask;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self::new(self.tp + o.tp, self.fp + o.fp, self.fn_ + o.fn_, self.tn + o.tn)
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub iou: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
}

impl MetricsReport {
    pub fn counts(&self) -> ConfusionCounts {
        ConfusionCounts::new(self.tp, self.fp, self.fn_, self.tn)
    }
}

pub fn confusion_counts(pred: &BinaryMask, gt: &BinaryMask) -> Result<ConfusionCounts> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::DimensionMismatch(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    // index = 2·pred + gt
    let mut bins = [0u64; 4];
    for (&p, &g) in pred.values().iter().zip(gt.values()) {
        bins[(2 * p + g) as usize] += 1;
    }
    Ok(ConfusionCounts::new(bins[3], bins[2], bins[1], bins[0]))
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Derives the headline metrics. When prediction and ground truth are both
/// empty (`tp + fp + fn = 0`) IoU, F1, precision and recall are 1. A ratio
/// whose denominator alone is zero otherwise counts as 0.
pub fn metrics(c: ConfusionCounts) -> MetricsReport {
    let ConfusionCounts { tp, fp, fn_, tn } = c;
    let total = c.total();
    let accuracy = if total == 0 { 1.0 } else { (tp + tn) as f64 / total as f64 };
    let (iou, f1, precision, recall) = if tp + fp + fn_ == 0 {
        (1.0, 1.0, 1.0, 1.0)
    } else {
        (
            ratio(tp, tp + fp + fn_),
            // equals 2·P·R/(P+R) with the common factors cancelled
            ratio(2 * tp, 2 * tp + fp + fn_),
            ratio(tp, tp + fp),
            ratio(tp, tp + fn_),
        )
    };
    MetricsReport {
        tp,
        fp,
        fn_,
        tn,
        iou,
        f1,
        precision,
        recall,
        accuracy,
    }
}
