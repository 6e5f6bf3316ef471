//! Domain types shared by every stage of the pipeline.
//!
//! All types validate their invariants on construction and are immutable
//! afterwards; transformations produce new values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channel count of every fluorescence image fed to the model.
pub const IMAGE_CHANNELS: usize = 3;

/// Default physical calibration, micrometres per pixel.
pub const DEFAULT_SCALE_UM_PER_PX: f64 = 5.0;

/// Row-major raster with interleaved channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Copy> Raster<T> {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::DimensionMismatch(format!(
                "raster extents must be positive, got {width}x{height}x{channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height}x{channels} raster needs {} values, got {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: T) -> Self {
        assert!(width > 0 && height > 0 && channels > 0, "raster extents must be positive");
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> T {
        self.data[self.index(x, y, c)]
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Raster<U> {
        Raster {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// A three-channel fluorescence image, either raw 8-bit intensities
/// (integral values in `[0, 255]`) or normalized reals in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FluorescenceImage {
    raster: Raster<f64>,
    normalized: bool,
    scale_um_per_px: f64,
}

impl FluorescenceImage {
    pub fn new(
        width: usize,
        height: usize,
        pixels: Vec<f64>,
        normalized: bool,
        scale_um_per_px: f64,
    ) -> Result<Self> {
        let raster = Raster::new(width, height, IMAGE_CHANNELS, pixels)?;
        Self::from_raster(raster, normalized, scale_um_per_px)
    }

    pub fn from_raster(raster: Raster<f64>, normalized: bool, scale_um_per_px: f64) -> Result<Self> {
        if raster.channels() != IMAGE_CHANNELS {
            return Err(Error::DimensionMismatch(format!(
                "fluorescence images have {IMAGE_CHANNELS} channels, got {}",
                raster.channels()
            )));
        }
        if !(scale_um_per_px.is_finite() && scale_um_per_px > 0.0) {
            return Err(Error::ValueOutOfRange(format!("scale_um_per_px must be > 0, got {scale_um_per_px}")));
        }
        let bad = raster.data().iter().position(|&v| {
            if normalized {
                !(0.0..=1.0).contains(&v)
            } else {
                !(0.0..=255.0).contains(&v) || v.fract() != 0.0
            }
        });
        if let Some(i) = bad {
            let v = raster.data()[i];
            let what = if normalized { "[0, 1]" } else { "integral [0, 255]" };
            return Err(Error::ValueOutOfRange(format!("pixel value {v} at index {i} is outside {what}")));
        }
        Ok(Self {
            raster,
            normalized,
            scale_um_per_px,
        })
    }

    /// Raw image from interleaved RGB bytes.
    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8], scale_um_per_px: f64) -> Result<Self> {
        Self::new(width, height, bytes.iter().map(|&b| b as f64).collect(), false, scale_um_per_px)
    }

    /// Interleaved RGB bytes; normalized images are scaled by 255 and rounded.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.raster
            .data()
            .iter()
            .map(|&v| if self.normalized { (v * 255.0).round() as u8 } else { v as u8 })
            .collect()
    }

    pub fn width(&self) -> usize {
        self.raster.width()
    }

    pub fn height(&self) -> usize {
        self.raster.height()
    }

    pub fn channels(&self) -> usize {
        IMAGE_CHANNELS
    }

    pub fn pixels(&self) -> &[f64] {
        self.raster.data()
    }

    pub fn raster(&self) -> &Raster<f64> {
        &self.raster
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn scale_um_per_px(&self) -> f64 {
        self.scale_um_per_px
    }
}

/// Per-pixel microplastic labels, `1` = particle, `0` = background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    raster: Raster<u8>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, values: Vec<u8>) -> Result<Self> {
        if let Some(i) = values.iter().position(|&v| v > 1) {
            return Err(Error::ValueOutOfRange(format!(
                "mask value {} at index {i} is not 0 or 1",
                values[i]
            )));
        }
        Ok(Self {
            raster: Raster::new(width, height, 1, values)?,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            raster: Raster::filled(width, height, 1, 0),
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y) as u8);
            }
        }
        Self {
            raster: Raster {
                width,
                height,
                channels: 1,
                data: values,
            },
        }
    }

    pub fn from_raster(raster: Raster<u8>) -> Result<Self> {
        if raster.channels() != 1 {
            return Err(Error::DimensionMismatch(format!(
                "masks are single-channel, got {} channels",
                raster.channels()
            )));
        }
        let (w, h) = (raster.width(), raster.height());
        Self::new(w, h, raster.into_data())
    }

    /// Decode an on-disk mask: `0 → 0`, `255 → 1`, anything else is rejected.
    pub fn from_gray8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        let values = bytes
            .iter()
            .enumerate()
            .map(|(i, &b)| match b {
                0 => Ok(0),
                255 => Ok(1),
                other => Err(Error::ValueOutOfRange(format!(
                    "mask byte {other} at index {i} is not 0 or 255"
                ))),
            })
            .collect::<Result<Vec<u8>>>()?;
        Self::new(width, height, values)
    }

    /// On-disk encoding, white (`255`) = microplastic.
    pub fn to_gray8(&self) -> Vec<u8> {
        self.raster.data().iter().map(|&v| v * 255).collect()
    }

    pub fn width(&self) -> usize {
        self.raster.width()
    }

    pub fn height(&self) -> usize {
        self.raster.height()
    }

    pub fn values(&self) -> &[u8] {
        self.raster.data()
    }

    pub fn raster(&self) -> &Raster<u8> {
        &self.raster
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.raster.get(x, y, 0) == 1
    }

    pub fn count_ones(&self) -> usize {
        self.values().iter().filter(|&&v| v == 1).count()
    }

    pub fn density(&self) -> f64 {
        self.count_ones() as f64 / self.values().len() as f64
    }
}

/// Checks that an image and its mask describe the same pixels.
pub fn validate_pair(image: &FluorescenceImage, mask: &BinaryMask) -> Result<()> {
    if image.width() != mask.width() || image.height() != mask.height() {
        return Err(Error::DimensionMismatch(format!(
            "image is {}x{}, mask is {}x{}",
            image.width(),
            image.height(),
            mask.width(),
            mask.height()
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Polymer {
    #[serde(rename = "HDPE")]
    Hdpe,
    #[serde(rename = "PET")]
    Pet,
    #[serde(rename = "OTHER")]
    Other,
}

impl Polymer {
    /// Nominal particle diameter of the spiked reference material.
    pub fn nominal_diameter_um(self) -> Option<f64> {
        match self {
            Polymer::Hdpe => Some(500.0),
            Polymer::Pet => Some(120.0),
            Polymer::Other => None,
        }
    }
}

/// One rendered particle: a rotated ellipse whose major axis is
/// `diameter_um` long.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleSpec {
    pub polymer: Polymer,
    pub diameter_um: f64,
    pub center: (f64, f64),
    pub eccentricity: f64,
    pub rotation: f64,
    pub peak_intensity: f64,
}

impl ParticleSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.diameter_um.is_finite() && self.diameter_um > 0.0) {
            return Err(Error::ValueOutOfRange(format!("diameter_um must be > 0, got {}", self.diameter_um)));
        }
        if !(0.0..1.0).contains(&self.eccentricity) {
            return Err(Error::ValueOutOfRange(format!(
                "eccentricity must be in [0, 1), got {}",
                self.eccentricity
            )));
        }
        if !(self.peak_intensity > 0.0 && self.peak_intensity <= 1.0) {
            return Err(Error::ValueOutOfRange(format!(
                "peak_intensity must be in (0, 1], got {}",
                self.peak_intensity
            )));
        }
        if !(self.center.0.is_finite() && self.center.1.is_finite() && self.rotation.is_finite()) {
            return Err(Error::ValueOutOfRange("particle center and rotation must be finite".into()));
        }
        Ok(())
    }

    /// Rendered major-axis length in pixels.
    pub fn extent_px(&self, scale_um_per_px: f64) -> f64 {
        self.diameter_um / scale_um_per_px
    }
}

/// A connected group of mask pixels, measured.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub id: usize,
    pub pixel_area: usize,
    pub centroid: (f64, f64),
    /// Inclusive pixel bounds `(x0, y0, x1, y1)`.
    pub bbox: (usize, usize, usize, usize),
    pub feret_px: f64,
    pub feret_um: f64,
}

impl Detection {
    pub fn bbox_area(&self) -> usize {
        let (x0, y0, x1, y1) = self.bbox;
        (x1 - x0 + 1) * (y1 - y0 + 1)
    }
}
