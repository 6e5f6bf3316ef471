//! Mini-batch SGD training over the train split of a manifest.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::infer::{prepare, Pipeline};
use super::loss::{loss_with_logit_grad, LossKind};
use super::model::SegNet;
use super::optim::Sgd;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::eval::evaluate::evaluate_pairs;
use crate::manifest::{DatasetManifest, Split};
use crate::types::{BinaryMask, FluorescenceImage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub loss: LossKind,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 35,
            learning_rate: 0.05,
            momentum: 0.9,
            seed: 42,
            loss: LossKind::BcePlusDice,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    /// A zero learning rate is accepted so that a run can be made a no-op.
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig(format!("learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidConfig(format!("threshold must lie in (0, 1), got {}", self.threshold)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean of the batch losses, weighted by batch size.
    pub train_loss: f64,
    /// Micro IoU on the test split, `None` when it is empty.
    pub val_iou: Option<f64>,
}

/// `epoch,train_loss,val_iou` rows; an empty field means no test split.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_iou\n");
    for r in history {
        let iou = r.val_iou.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, iou));
    }
    out
}

/// One labeled network input.
pub struct Sample {
    pub input: Tensor<f32>,
    pub target: Tensor<f32>,
}

pub fn load_split(manifest: &DatasetManifest, split: Split) -> Result<Vec<(FluorescenceImage, BinaryMask)>> {
    manifest.split(split).map(|e| manifest.load_pair(e)).collect()
}

pub fn samples_from_pairs(pairs: &[(FluorescenceImage, BinaryMask)], pipeline: Pipeline) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for (image, mask) in pairs {
        let (inputs, targets) = prepare::<f32>(image, Some(mask), pipeline)?;
        out.extend(inputs.into_iter().zip(targets).map(|(input, target)| Sample { input, target }));
    }
    Ok(out)
}

/// Forward, loss and reverse pass over one batch, then an optimizer step.
/// Returns the batch loss before the step.
pub fn train_step(model: &mut SegNet<f32>, opt: &mut Sgd<f32>, batch: &[&Sample], kind: LossKind) -> Result<f64> {
    let mut logits = Vec::with_capacity(batch.len());
    let mut caches = Vec::with_capacity(batch.len());
    for s in batch {
        let (z, cache) = model.forward_train(&s.input)?;
        logits.push(z);
        caches.push(cache);
    }
    let targets: Vec<Tensor<f32>> = batch.iter().map(|s| s.target.clone()).collect();
    let (loss, dlogits) = loss_with_logit_grad(&logits, &targets, kind)?;
    drop(logits);
    let mut grads = model.params().zeros_like();
    for (cache, dz) in caches.iter().zip(&dlogits) {
        model.backward(cache, dz, &mut grads);
    }
    drop(caches);
    opt.step(model.params_mut(), &grads);
    Ok(loss)
}

/// Everything besides the model and data that a training run needs.
pub struct TrainOptions<'a> {
    pub pipeline: Option<Pipeline>,
    pub on_epoch: Option<&'a mut dyn FnMut(&EpochRecord)>,
}

impl Default for TrainOptions<'_> {
    fn default() -> Self {
        Self {
            pipeline: None,
            on_epoch: None,
        }
    }
}

pub fn train(model: SegNet<f32>, manifest: &DatasetManifest, cfg: &TrainConfig) -> Result<(SegNet<f32>, Vec<EpochRecord>)> {
    train_with(model, manifest, cfg, TrainOptions::default())
}

pub fn train_with(
    model: SegNet<f32>,
    manifest: &DatasetManifest,
    cfg: &TrainConfig,
    opts: TrainOptions<'_>,
) -> Result<(SegNet<f32>, Vec<EpochRecord>)> {
    cfg.validate()?;
    let n_train = manifest.count(Split::Train);
    if n_train == 0 {
        return Err(Error::EmptySplit(Split::Train.to_string()));
    }
    if cfg.batch_size > n_train {
        return Err(Error::InvalidConfig(format!(
            "batch_size {} exceeds the {n_train} training images",
            cfg.batch_size
        )));
    }
    let pipeline = opts.pipeline.unwrap_or_else(|| Pipeline::for_model(&model));
    pipeline.check(&model)?;
    let samples = samples_from_pairs(&load_split(manifest, Split::Train)?, pipeline)?;
    let validation = load_split(manifest, Split::Test)?;
    train_on_samples(model, &samples, &validation, cfg, pipeline, opts.on_epoch)
}

/// Training loop over preloaded samples. `validation` pairs are scored
/// after every epoch.
pub fn train_on_samples(
    mut model: SegNet<f32>,
    samples: &[Sample],
    validation: &[(FluorescenceImage, BinaryMask)],
    cfg: &TrainConfig,
    pipeline: Pipeline,
    mut on_epoch: Option<&mut dyn FnMut(&EpochRecord)>,
) -> Result<(SegNet<f32>, Vec<EpochRecord>)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptySplit(Split::Train.to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Sgd::new(model.params(), cfg.learning_rate as f32, cfg.momentum as f32);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            total += train_step(&mut model, &mut opt, &batch, cfg.loss)? * batch.len() as f64;
        }
        let val_iou = if validation.is_empty() {
            None
        } else {
            let counts = evaluate_pairs(&model, validation, cfg.threshold, pipeline)?;
            Some(crate::eval::metrics(counts.into_iter().sum()).iou)
        };
        let record = EpochRecord {
            epoch,
            train_loss: total / samples.len() as f64,
            val_iou,
        };
        if let Some(f) = on_epoch.as_mut() {
            f(&record);
        }
        history.push(record);
    }
    Ok((model, history))
}
