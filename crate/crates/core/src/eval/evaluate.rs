//! Scoring a model against a manifest split.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{confusion_counts, metrics, ConfusionCounts, MetricsReport};
use crate::error::{Error, Result};
use crate::manifest::{DatasetManifest, Split};
use crate::segnet::infer::{predict_mask_with, Pipeline};
use crate::segnet::model::SegNet;
use crate::segnet::tensor::Real;
use crate::types::{BinaryMask, FluorescenceImage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageReport {
    pub image_path: String,
    #[serde(flatten)]
    pub metrics: MetricsReport,
}

/// Unweighted mean of per-image metrics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub iou: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub split: Split,
    pub threshold: f64,
    /// Metrics of the summed confusion counts.
    pub aggregate: MetricsReport,
    pub macro_average: MacroMetrics,
    pub per_image: Vec<ImageReport>,
}

impl Evaluation {
    pub fn from_counts(split: Split, threshold: f64, per_image: Vec<(String, ConfusionCounts)>) -> Result<Self> {
        if per_image.is_empty() {
            return Err(Error::EmptySplit(split.to_string()));
        }
        let aggregate = metrics(per_image.iter().map(|(_, c)| *c).sum());
        let reports: Vec<ImageReport> = per_image
            .into_iter()
            .map(|(image_path, c)| ImageReport {
                image_path,
                metrics: metrics(c),
            })
            .collect();
        let n = reports.len() as f64;
        let mean = |f: fn(&MetricsReport) -> f64| reports.iter().map(|r| f(&r.metrics)).sum::<f64>() / n;
        let macro_average = MacroMetrics {
            iou: mean(|m| m.iou),
            f1: mean(|m| m.f1),
            precision: mean(|m| m.precision),
            recall: mean(|m| m.recall),
            accuracy: mean(|m| m.accuracy),
        };
        Ok(Self {
            split,
            threshold,
            aggregate,
            macro_average,
            per_image: reports,
        })
    }
}

/// Confusion counts per image pair, in input order.
pub fn evaluate_pairs<T: Real>(
    model: &SegNet<T>,
    pairs: &[(FluorescenceImage, BinaryMask)],
    threshold: f64,
    pipeline: Pipeline,
) -> Result<Vec<ConfusionCounts>> {
    pairs
        .par_iter()
        .map(|(image, gt)| confusion_counts(&predict_mask_with(model, image, threshold, pipeline)?, gt))
        .collect()
}

pub fn evaluate<T: Real>(model: &SegNet<T>, manifest: &DatasetManifest, split: Split) -> Result<Evaluation> {
    evaluate_with(model, manifest, split, 0.5, Pipeline::for_model(model))
}

pub fn evaluate_with<T: Real>(
    model: &SegNet<T>,
    manifest: &DatasetManifest,
    split: Split,
    threshold: f64,
    pipeline: Pipeline,
) -> Result<Evaluation> {
    let entries: Vec<_> = manifest.split(split).collect();
    if entries.is_empty() {
        return Err(Error::EmptySplit(split.to_string()));
    }
    let per_image = entries
        .par_iter()
        .map(|e| {
            let (image, gt) = manifest.load_pair(e)?;
            let pred = predict_mask_with(model, &image, threshold, pipeline)?;
            Ok((e.image_path.clone(), confusion_counts(&pred, &gt)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Evaluation::from_counts(split, threshold, per_image)
}
