//! PNG encoding for images and masks.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ExtendedColorType, ImageEncoder, ImageReader};

use crate::error::{Error, Result};
use crate::types::{BinaryMask, FluorescenceImage};

fn decode(path: &Path) -> Result<image::DynamicImage> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    ImageReader::with_format(BufReader::new(file), image::ImageFormat::Png)
        .decode()
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::format(path, other),
        })
}

fn encode(path: &Path, width: usize, height: usize, bytes: &[u8], color: ExtendedColorType) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    PngEncoder::new_with_quality(&mut out, CompressionType::Default, FilterType::Adaptive)
        .write_image(bytes, width as u32, height as u32, color)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::format(path, other),
        })?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads any PNG as an 8-bit RGB raw image. Grayscale is replicated into
/// three channels and alpha is dropped.
pub fn read_image(path: impl AsRef<Path>, scale_um_per_px: f64) -> Result<FluorescenceImage> {
    let path = path.as_ref();
    let rgb = decode(path)?.to_rgb8();
    let (w, h) = rgb.dimensions();
    FluorescenceImage::from_rgb8(w as usize, h as usize, rgb.as_raw(), scale_um_per_px)
}

pub fn write_image(path: impl AsRef<Path>, image: &FluorescenceImage) -> Result<()> {
    write_rgb8(path, image.width(), image.height(), &image.to_rgb8())
}

pub fn write_rgb8(path: impl AsRef<Path>, width: usize, height: usize, bytes: &[u8]) -> Result<()> {
    encode(path.as_ref(), width, height, bytes, ExtendedColorType::Rgb8)
}

/// Reads a single-channel `{0, 255}` mask.
pub fn read_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let path = path.as_ref();
    let img = decode(path)?;
    if img.color() != image::ColorType::L8 {
        return Err(Error::format(path, format!("mask must be 8-bit grayscale, found {:?}", img.color())));
    }
    let gray = img.into_luma8();
    let (w, h) = gray.dimensions();
    BinaryMask::from_gray8(w as usize, h as usize, gray.as_raw())
}

pub fn write_mask(path: impl AsRef<Path>, mask: &BinaryMask) -> Result<()> {
    encode(path.as_ref(), mask.width(), mask.height(), &mask.to_gray8(), ExtendedColorType::L8)
}
