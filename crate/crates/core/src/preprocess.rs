//! Intensity normalization, resizing, padding to a patch multiple, tiling
//! and stitching.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{BinaryMask, FluorescenceImage, Raster};

pub const DEFAULT_PATCH_SIZE: usize = 256;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    /// One min and max over every pixel and channel.
    #[default]
    Global,
    PerChannel,
}

/// Global min-max scaling to `[0, 1]`.
pub fn normalize(image: &FluorescenceImage) -> Result<FluorescenceImage> {
    normalize_with(image, NormalizationMode::Global)
}

/// Min-max scaling; a zero range maps to all zeros.
pub fn normalize_with(image: &FluorescenceImage, mode: NormalizationMode) -> Result<FluorescenceImage> {
    if image.is_normalized() {
        return Err(Error::AlreadyNormalized);
    }
    Ok(min_max(image, mode))
}

fn min_max(image: &FluorescenceImage, mode: NormalizationMode) -> FluorescenceImage {
    let px = image.pixels();
    let c = image.channels();
    let groups: Vec<Vec<usize>> = match mode {
        NormalizationMode::Global => vec![(0..c).collect()],
        NormalizationMode::PerChannel => (0..c).map(|k| vec![k]).collect(),
    };
    let mut out = vec![0.0; px.len()];
    for group in groups {
        let values = || px.chunks_exact(c).flat_map(|p| group.iter().map(move |&k| p[k]));
        let lo = values().fold(f64::INFINITY, f64::min);
        let hi = values().fold(f64::NEG_INFINITY, f64::max);
        let range = hi - lo;
        for (o, p) in out.chunks_exact_mut(c).zip(px.chunks_exact(c)) {
            for &k in &group {
                o[k] = if range > 0.0 { ((p[k] - lo) / range).clamp(0.0, 1.0) } else { 0.0 };
            }
        }
    }
    FluorescenceImage::new(image.width(), image.height(), out, true, image.scale_um_per_px())
        .expect("min-max output lies in [0, 1]")
}

/// Maps a destination coordinate to the source axis with corners aligned.
fn source_coord(dst: usize, n_in: usize, n_out: usize) -> f64 {
    if n_out == 1 {
        (n_in - 1) as f64 / 2.0
    } else {
        dst as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
    }
}

/// Bilinear resampling with corner-aligned sampling: the four corner
/// pixels of the output coincide with those of the input.
pub fn resize_raster(src: &Raster<f64>, out_w: usize, out_h: usize) -> Result<Raster<f64>> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::ValueOutOfRange(format!("resize target must be >= 1, got {out_w}x{out_h}")));
    }
    let (w, h, c) = (src.width(), src.height(), src.channels());
    let mut out = Vec::with_capacity(out_w * out_h * c);
    for y in 0..out_h {
        let sy = source_coord(y, h, out_h);
        let y0 = (sy.floor() as usize).min(h - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for x in 0..out_w {
            let sx = source_coord(x, w, out_w);
            let x0 = (sx.floor() as usize).min(w - 1);
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            for k in 0..c {
                let top = src.get(x0, y0, k) * (1.0 - fx) + src.get(x1, y0, k) * fx;
                let bottom = src.get(x0, y1, k) * (1.0 - fx) + src.get(x1, y1, k) * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Raster::new(out_w, out_h, c, out)
}

/// Resizes to `target × target`. Raw images are rounded back to integral
/// intensities.
pub fn resize(image: &FluorescenceImage, target: usize) -> Result<FluorescenceImage> {
    let mut r = resize_raster(image.raster(), target, target)?;
    if image.is_normalized() {
        r = r.map(|v| v.clamp(0.0, 1.0));
    } else {
        r = r.map(|v| v.round().clamp(0.0, 255.0));
    }
    FluorescenceImage::from_raster(r, image.is_normalized(), image.scale_um_per_px())
}

/// Nearest-neighbor resize using pixel-center sampling.
pub fn resize_mask(mask: &BinaryMask, target: usize) -> Result<BinaryMask> {
    if target == 0 {
        return Err(Error::ValueOutOfRange("resize target must be >= 1".into()));
    }
    let (w, h) = (mask.width(), mask.height());
    let nearest = |dst: usize, n_in: usize| (((dst as f64 + 0.5) * n_in as f64 / target as f64) as usize).min(n_in - 1);
    Ok(BinaryMask::from_fn(target, target, |x, y| mask.get(nearest(x, w), nearest(y, h))))
}

/// Padding that brings `(w, h)` up to the next multiple of `p`; zero when
/// already divisible.
pub fn compute_padding(w: usize, h: usize, p: usize) -> (usize, usize) {
    assert!(p >= 1, "patch size must be >= 1");
    ((p - w % p) % p, (p - h % p) % p)
}

/// Tiling geometry of one padded raster.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub patch_size: usize,
    pub original_w: usize,
    pub original_h: usize,
    pub pad_w: usize,
    pub pad_h: usize,
    pub rows: usize,
    pub cols: usize,
}

impl PatchGrid {
    pub fn new(original_w: usize, original_h: usize, patch_size: usize) -> Result<Self> {
        if patch_size == 0 || original_w == 0 || original_h == 0 {
            return Err(Error::GridMismatch(format!(
                "grid extents must be positive: {original_w}x{original_h}, patch {patch_size}"
            )));
        }
        let (pad_w, pad_h) = compute_padding(original_w, original_h, patch_size);
        Self::with_padding(original_w, original_h, patch_size, pad_w, pad_h)
    }

    fn with_padding(original_w: usize, original_h: usize, patch_size: usize, pad_w: usize, pad_h: usize) -> Result<Self> {
        let p = patch_size;
        if p == 0 || pad_w >= p || pad_h >= p || (original_w + pad_w) % p != 0 || (original_h + pad_h) % p != 0 {
            return Err(Error::GridMismatch(format!(
                "padding ({pad_w}, {pad_h}) does not align {original_w}x{original_h} to patch size {p}"
            )));
        }
        Ok(Self {
            patch_size: p,
            original_w,
            original_h,
            pad_w,
            pad_h,
            rows: (original_h + pad_h) / p,
            cols: (original_w + pad_w) / p,
        })
    }

    pub fn padded_w(&self) -> usize {
        self.original_w + self.pad_w
    }

    pub fn padded_h(&self) -> usize {
        self.original_h + self.pad_h
    }

    pub fn patch_count(&self) -> usize {
        self.rows * self.cols
    }
}

/// Appends `pad_w` zero columns on the right and `pad_h` zero rows at the
/// bottom.
pub fn pad<T: Copy + Default>(
    raster: &Raster<T>,
    pad_w: usize,
    pad_h: usize,
    patch_size: usize,
) -> Result<(Raster<T>, PatchGrid)> {
    let grid = PatchGrid::with_padding(raster.width(), raster.height(), patch_size, pad_w, pad_h)?;
    if pad_w == 0 && pad_h == 0 {
        return Ok((raster.clone(), grid));
    }
    let c = raster.channels();
    let (w, pw, ph) = (raster.width(), grid.padded_w(), grid.padded_h());
    let mut data = vec![T::default(); pw * ph * c];
    for (y, row) in raster.data().chunks_exact(w * c).enumerate() {
        data[y * pw * c..(y * pw + w) * c].copy_from_slice(row);
    }
    Ok((Raster::new(pw, ph, c, data)?, grid))
}

/// Pads with the minimal padding for `patch_size`.
pub fn pad_to_multiple<T: Copy + Default>(raster: &Raster<T>, patch_size: usize) -> Result<(Raster<T>, PatchGrid)> {
    let (pw, ph) = compute_padding(raster.width(), raster.height(), patch_size);
    pad(raster, pw, ph, patch_size)
}

/// Splits a padded raster into `rows × cols` patches in row-major order.
pub fn tile<T: Copy>(padded: &Raster<T>, grid: &PatchGrid) -> Result<Vec<Raster<T>>> {
    if padded.width() != grid.padded_w() || padded.height() != grid.padded_h() {
        return Err(Error::GridMismatch(format!(
            "raster is {}x{}, grid expects {}x{}",
            padded.width(),
            padded.height(),
            grid.padded_w(),
            grid.padded_h()
        )));
    }
    let (p, c, w) = (grid.patch_size, padded.channels(), padded.width());
    let mut patches = Vec::with_capacity(grid.patch_count());
    for r in 0..grid.rows {
        for col in 0..grid.cols {
            let mut data = Vec::with_capacity(p * p * c);
            for y in r * p..(r + 1) * p {
                let start = (y * w + col * p) * c;
                data.extend_from_slice(&padded.data()[start..start + p * c]);
            }
            patches.push(Raster::new(p, p, c, data)?);
        }
    }
    Ok(patches)
}

/// Reassembles row-major patches and crops the padding away.
pub fn stitch<T: Copy>(patches: &[Raster<T>], grid: &PatchGrid) -> Result<Raster<T>> {
    if patches.len() != grid.patch_count() {
        return Err(Error::PatchCountMismatch {
            expected: grid.patch_count(),
            actual: patches.len(),
        });
    }
    let p = grid.patch_size;
    let c = patches[0].channels();
    if let Some(bad) = patches.iter().find(|q| q.width() != p || q.height() != p || q.channels() != c) {
        return Err(Error::GridMismatch(format!(
            "patch is {}x{}x{}, expected {p}x{p}x{c}",
            bad.width(),
            bad.height(),
            bad.channels()
        )));
    }
    let (w, h) = (grid.original_w, grid.original_h);
    let mut data = Vec::with_capacity(w * h * c);
    for y in 0..h {
        let (r, py) = (y / p, y % p);
        let mut x = 0;
        while x < w {
            let (col, px) = (x / p, x % p);
            let run = (p - px).min(w - x);
            let patch = &patches[r * grid.cols + col];
            let start = (py * p + px) * c;
            data.extend_from_slice(&patch.data()[start..start + run * c]);
            x += run;
        }
    }
    Raster::new(w, h, c, data)
}
