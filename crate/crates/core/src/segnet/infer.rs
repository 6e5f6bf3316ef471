//! Whole-image inference: normalize, split into model inputs, run the
//! network and reassemble a mask at the original size.

use serde::{Deserialize, Serialize};

use super::model::SegNet;
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};
use crate::preprocess::{normalize, pad_to_multiple, resize, resize_mask, resize_raster, stitch, tile};
use crate::types::{BinaryMask, FluorescenceImage, Raster};

/// How an image of arbitrary size is turned into network inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    /// Native resolution, zero-padded to a multiple of `patch_size` and
    /// cut into `patch_size × patch_size` tiles.
    Tile { patch_size: usize },
    /// Bilinear resize to `size × size`; the probability map is resized
    /// back before thresholding.
    Resize { size: usize },
}

impl Pipeline {
    /// Native tiling at the model's input size.
    pub fn for_model<T: Real>(model: &SegNet<T>) -> Self {
        Pipeline::Tile {
            patch_size: model.config().input_size,
        }
    }

    fn side(&self) -> usize {
        match *self {
            Pipeline::Tile { patch_size } => patch_size,
            Pipeline::Resize { size } => size,
        }
    }

    pub fn check<T: Real>(&self, model: &SegNet<T>) -> Result<()> {
        let s = model.config().stride();
        let side = self.side();
        if side == 0 || side % s != 0 {
            return Err(Error::InvalidConfig(format!(
                "pipeline size {side} is not a positive multiple of the network stride {s}"
            )));
        }
        Ok(())
    }
}

/// `H × W × C` interleaved raster to a `C × H × W` tensor.
pub fn raster_to_tensor<T: Real>(r: &Raster<f64>) -> Tensor<T> {
    let (w, h, c) = (r.width(), r.height(), r.channels());
    let mut t = Tensor::zeros(c, h, w);
    for (i, px) in r.data().chunks_exact(c).enumerate() {
        for (k, &v) in px.iter().enumerate() {
            t.data[k * w * h + i] = T::from_f64(v);
        }
    }
    t
}

fn mask_to_tensor<T: Real>(r: &Raster<u8>) -> Tensor<T> {
    Tensor::from_vec(
        1,
        r.height(),
        r.width(),
        r.data().iter().map(|&v| T::from_f64(v as f64)).collect(),
    )
}

fn tensor_to_raster<T: Real>(t: &Tensor<T>) -> Raster<f64> {
    assert_eq!(t.channels, 1);
    Raster::new(t.width, t.height, 1, t.data.iter().map(|v| v.as_f64()).collect()).expect("tensor has positive extent")
}

fn normalized(image: &FluorescenceImage) -> Result<FluorescenceImage> {
    if image.is_normalized() {
        Ok(image.clone())
    } else {
        normalize(image)
    }
}

/// Network inputs for one image, and matching targets when a mask is given.
pub fn prepare<T: Real>(
    image: &FluorescenceImage,
    mask: Option<&BinaryMask>,
    pipeline: Pipeline,
) -> Result<(Vec<Tensor<T>>, Vec<Tensor<T>>)> {
    let image = normalized(image)?;
    match pipeline {
        Pipeline::Tile { patch_size } => {
            let (padded, grid) = pad_to_multiple(image.raster(), patch_size)?;
            let inputs = tile(&padded, &grid)?.iter().map(raster_to_tensor).collect();
            let targets = match mask {
                Some(m) => {
                    let (padded, grid) = pad_to_multiple(m.raster(), patch_size)?;
                    tile(&padded, &grid)?.iter().map(mask_to_tensor).collect()
                }
                None => Vec::new(),
            };
            Ok((inputs, targets))
        }
        Pipeline::Resize { size } => {
            let inputs = vec![raster_to_tensor(resize(&image, size)?.raster())];
            let targets = match mask {
                Some(m) => vec![mask_to_tensor(resize_mask(m, size)?.raster())],
                None => Vec::new(),
            };
            Ok((inputs, targets))
        }
    }
}

/// Per-pixel probabilities at the image's original size.
pub fn predict_probabilities<T: Real>(
    model: &SegNet<T>,
    image: &FluorescenceImage,
    pipeline: Pipeline,
) -> Result<Raster<f64>> {
    pipeline.check(model)?;
    let (inputs, _) = prepare::<T>(image, None, pipeline)?;
    let probs: Vec<Raster<f64>> = model.forward(&inputs)?.iter().map(tensor_to_raster).collect();
    let (w, h) = (image.width(), image.height());
    match pipeline {
        Pipeline::Tile { patch_size } => {
            let (_, grid) = pad_to_multiple(&Raster::filled(w, h, 1, 0u8), patch_size)?;
            stitch(&probs, &grid)
        }
        Pipeline::Resize { .. } => resize_raster(&probs[0], w, h),
    }
}

/// Binary mask with `1` where the probability exceeds `threshold`, using
/// native tiling at the model's input size.
pub fn predict_mask<T: Real>(model: &SegNet<T>, image: &FluorescenceImage, threshold: f64) -> Result<BinaryMask> {
    predict_mask_with(model, image, threshold, Pipeline::for_model(model))
}

pub fn predict_mask_with<T: Real>(
    model: &SegNet<T>,
    image: &FluorescenceImage,
    threshold: f64,
    pipeline: Pipeline,
) -> Result<BinaryMask> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::ValueOutOfRange(format!("threshold must lie in [0, 1], got {threshold}")));
    }
    let probs = predict_probabilities(model, image, pipeline)?;
    let values = probs.data().iter().map(|&p| (p > threshold) as u8).collect();
    BinaryMask::new(image.width(), image.height(), values)
}
