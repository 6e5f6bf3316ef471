//! Deterministic synthetic fluorescence images with analytic ground truth.
//!
//! Each particle is a rotated ellipse with an `erfc` edge falloff. The mask
//! marks pixels where a particle's contribution exceeds half its peak,
//! which is exactly the interior of the ellipse. The background is a base
//! level plus soft autofluorescence blobs, followed by sensor noise.

use std::collections::BTreeMap;
use std::f64::consts::{PI, SQRT_2};
use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::manifest::{DatasetManifest, ManifestEntry, Provenance, Split, MANIFEST_FILE};
use crate::types::{BinaryMask, FluorescenceImage, ParticleSpec, Polymer, DEFAULT_SCALE_UM_PER_PX};

/// Required gap between the dimmest labeled particle pixel (half the
/// minimum peak) and the background ceiling.
pub const MIN_CONTRAST_GAP: f64 = 0.2;

/// Relative gain of each RGB channel applied to the rendered intensity.
pub const CHANNEL_GAINS: [f64; 3] = [1.0, 0.6, 0.25];

/// Photon count at full-scale intensity when Poisson noise is enabled.
pub const POISSON_FULL_SCALE: f64 = 255.0;

/// Free space, in pixels, kept between the bounding circles of two
/// particles when overlap is not allowed.
pub const PLACEMENT_GAP_PX: f64 = 2.0;

const PLACEMENT_ATTEMPTS: usize = 200;
const BLOB_SIGMA_PX: (f64, f64) = (6.0, 24.0);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundConfig {
    pub base_intensity: f64,
    pub autofluorescence_blob_count: [usize; 2],
    pub blob_intensity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub gaussian_sigma: f64,
    pub poisson_enabled: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub n_images: usize,
    pub image_w: usize,
    pub image_h: usize,
    pub particles_per_image: [usize; 2],
    pub polymer_mix: BTreeMap<Polymer, f64>,
    pub background: BackgroundConfig,
    pub noise: NoiseConfig,
    pub master_seed: u64,
    #[serde(default = "default_scale")]
    pub scale_um_per_px: f64,
    /// Range the per-particle peak intensity is drawn from.
    #[serde(default = "default_peak")]
    pub peak_intensity: [f64; 2],
    #[serde(default = "default_max_ecc")]
    pub max_eccentricity: f64,
    /// Relative half-width of the uniform jitter around nominal diameters.
    #[serde(default = "default_jitter")]
    pub diameter_jitter: f64,
    /// Standard deviation of the edge falloff, pixels.
    #[serde(default = "default_edge")]
    pub edge_sigma_px: f64,
    #[serde(default)]
    pub allow_overlap: bool,
    #[serde(default)]
    pub provenance: Provenance,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
}

fn default_scale() -> f64 {
    DEFAULT_SCALE_UM_PER_PX
}
fn default_peak() -> [f64; 2] {
    [0.85, 1.0]
}
fn default_max_ecc() -> f64 {
    0.6
}
fn default_jitter() -> f64 {
    0.1
}
fn default_edge() -> f64 {
    1.0
}
fn default_train_fraction() -> f64 {
    0.8
}

impl Default for GenConfig {
    fn default() -> Self {
        Self::easy()
    }
}

impl GenConfig {
    /// Sparse particles over a dim, mildly noisy background.
    pub fn easy() -> Self {
        Self {
            n_images: 250,
            image_w: 256,
            image_h: 256,
            particles_per_image: [2, 6],
            polymer_mix: BTreeMap::from([(Polymer::Hdpe, 0.4), (Polymer::Pet, 0.6)]),
            background: BackgroundConfig {
                base_intensity: 0.05,
                autofluorescence_blob_count: [2, 6],
                blob_intensity: 0.15,
            },
            noise: NoiseConfig {
                gaussian_sigma: 0.03,
                poisson_enabled: false,
            },
            master_seed: 42,
            scale_um_per_px: default_scale(),
            peak_intensity: default_peak(),
            max_eccentricity: default_max_ecc(),
            diameter_jitter: default_jitter(),
            edge_sigma_px: default_edge(),
            allow_overlap: false,
            provenance: Provenance::Spiked,
            train_fraction: default_train_fraction(),
        }
    }

    /// Stand-in for field samples: more blobs, more noise, elongated
    /// particles that may touch. Not a model of real blood imagery.
    pub fn hard() -> Self {
        Self {
            particles_per_image: [3, 10],
            background: BackgroundConfig {
                base_intensity: 0.08,
                autofluorescence_blob_count: [6, 14],
                blob_intensity: 0.16,
            },
            noise: NoiseConfig {
                gaussian_sigma: 0.06,
                poisson_enabled: true,
            },
            peak_intensity: [0.9, 1.0],
            max_eccentricity: 0.8,
            diameter_jitter: 0.25,
            edge_sigma_px: 1.5,
            allow_overlap: true,
            provenance: Provenance::Real,
            ..Self::easy()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "easy" => Ok(Self::easy()),
            "hard" => Ok(Self::hard()),
            other => Err(Error::InvalidConfig(format!("unknown preset `{other}`, expected easy or hard"))),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("GenConfig serializes to TOML")
    }

    /// Highest value the pre-noise background can reach.
    pub fn background_ceiling(&self) -> f64 {
        self.background.base_intensity + self.background.blob_intensity
    }

    /// Lowest pre-noise intensity a masked particle pixel can have above
    /// its local background.
    pub fn particle_floor(&self) -> f64 {
        0.5 * self.peak_intensity[0]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_images == 0 {
            return bad("n_images must be at least 1".into());
        }
        if self.image_w == 0 || self.image_h == 0 {
            return bad(format!("image size must be positive, got {}x{}", self.image_w, self.image_h));
        }
        let [pmin, pmax] = self.particles_per_image;
        if pmin > pmax {
            return bad(format!("particles_per_image [{pmin}, {pmax}] is not a range"));
        }
        if self.polymer_mix.is_empty() {
            return bad("polymer_mix is empty".into());
        }
        for (polymer, &w) in &self.polymer_mix {
            if polymer.nominal_diameter_um().is_none() {
                return bad(format!("polymer_mix may only weight HDPE and PET, found {polymer:?}"));
            }
            if !(w.is_finite() && w >= 0.0) {
                return bad(format!("polymer weight for {polymer:?} must be >= 0, got {w}"));
            }
        }
        let total: f64 = self.polymer_mix.values().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("polymer_mix weights sum to {total}, expected 1"));
        }
        let bg = &self.background;
        if !(0.0..=1.0).contains(&bg.base_intensity) || !(0.0..=1.0).contains(&bg.blob_intensity) {
            return bad("background intensities must lie in [0, 1]".into());
        }
        if bg.autofluorescence_blob_count[0] > bg.autofluorescence_blob_count[1] {
            return bad("autofluorescence_blob_count is not a range".into());
        }
        if !(self.noise.gaussian_sigma.is_finite() && self.noise.gaussian_sigma >= 0.0) {
            return bad("gaussian_sigma must be >= 0".into());
        }
        if !(self.scale_um_per_px.is_finite() && self.scale_um_per_px > 0.0) {
            return bad("scale_um_per_px must be > 0".into());
        }
        let [lo, hi] = self.peak_intensity;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad(format!("peak_intensity [{lo}, {hi}] must satisfy 0 < min <= max <= 1"));
        }
        if !(0.0..=0.95).contains(&self.max_eccentricity) {
            return bad("max_eccentricity must lie in [0, 0.95]".into());
        }
        if !(0.0..1.0).contains(&self.diameter_jitter) {
            return bad("diameter_jitter must lie in [0, 1)".into());
        }
        if !(self.edge_sigma_px.is_finite() && self.edge_sigma_px > 0.0) {
            return bad("edge_sigma_px must be > 0".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction must lie in (0, 1)".into());
        }
        let gap = self.particle_floor() - self.background_ceiling();
        if gap < MIN_CONTRAST_GAP - 1e-12 {
            return bad(format!(
                "contrast gap {gap:.3} between half the minimum peak ({:.3}) and the background ceiling ({:.3}) is below {MIN_CONTRAST_GAP}",
                self.particle_floor(),
                self.background_ceiling()
            ));
        }
        Ok(())
    }
}

/// Per-image seed derived from the master seed.
pub fn image_seed(master_seed: u64, index: usize) -> u64 {
    splitmix64(master_seed ^ splitmix64(index as u64 ^ 0xA5A5_5A5A_C3C3_3C3C))
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator output for one index.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedImage {
    pub image: FluorescenceImage,
    pub mask: BinaryMask,
    pub particles: Vec<ParticleSpec>,
    pub overlaps: bool,
    pub seed: u64,
}

/// Noise-free single-channel intensity layers of a scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneLayers {
    pub width: usize,
    pub height: usize,
    pub background: Vec<f64>,
    /// Summed particle contributions, before clamping.
    pub particles: Vec<f64>,
    pub mask: BinaryMask,
}

impl SceneLayers {
    /// Clamped pre-noise intensity at pixel `i`.
    pub fn intensity(&self, i: usize) -> f64 {
        (self.background[i] + self.particles[i]).clamp(0.0, 1.0)
    }
}

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    fn new(p: &ParticleSpec, scale: f64) -> Self {
        let a = 0.5 * p.extent_px(scale);
        Self {
            cx: p.center.0,
            cy: p.center.1,
            a,
            b: a * (1.0 - p.eccentricity * p.eccentricity).sqrt(),
            cos: p.rotation.cos(),
            sin: p.rotation.sin(),
        }
    }

    /// Normalized elliptical radius (`< 1` inside) and an approximate
    /// signed distance to the boundary in pixels.
    fn radius_and_distance(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        let (ua, vb) = (u / self.a, v / self.b);
        let r = (ua * ua + vb * vb).sqrt();
        if r == 0.0 {
            return (0.0, -self.b);
        }
        // first-order distance: (r - 1) / |grad r|
        let grad = ((ua / self.a).powi(2) + (vb / self.b).powi(2)).sqrt() / r;
        (r, (r - 1.0) / grad)
    }
}

/// Contribution of one particle at signed distance `s` from its boundary.
fn edge_profile(peak: f64, s: f64, sigma: f64) -> f64 {
    peak * 0.5 * libm::erfc(s / (sigma * SQRT_2))
}

/// Renders particles over a background; returns the summed particle layer
/// and the mask.
fn render_particles(
    particles: &[ParticleSpec],
    width: usize,
    height: usize,
    scale: f64,
    edge_sigma: f64,
) -> (Vec<f64>, BinaryMask) {
    let mut layer = vec![0.0; width * height];
    let mut mask = vec![0u8; width * height];
    let reach = 5.0 * edge_sigma + 1.0;
    for p in particles {
        let e = Ellipse::new(p, scale);
        let x0 = ((e.cx - e.a - reach).floor().max(0.0)) as usize;
        let y0 = ((e.cy - e.a - reach).floor().max(0.0)) as usize;
        let x1 = ((e.cx + e.a + reach).ceil().max(0.0) as usize).min(width - 1);
        let y1 = ((e.cy + e.a + reach).ceil().max(0.0) as usize).min(height - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let (r, s) = e.radius_and_distance(x as f64, y as f64);
                let i = y * width + x;
                layer[i] += edge_profile(p.peak_intensity, s, edge_sigma);
                if r < 1.0 {
                    mask[i] = 1;
                }
            }
        }
    }
    (layer, BinaryMask::new(width, height, mask).expect("mask values are binary"))
}

fn render_background(cfg: &GenConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (w, h) = (cfg.image_w, cfg.image_h);
    let bg = &cfg.background;
    let [nmin, nmax] = bg.autofluorescence_blob_count;
    let n = rng.random_range(nmin..=nmax);
    let blobs: Vec<(f64, f64, f64, f64)> = (0..n)
        .map(|_| {
            let cx = rng.random::<f64>() * w as f64;
            let cy = rng.random::<f64>() * h as f64;
            let sigma = rng.random_range(BLOB_SIGMA_PX.0..=BLOB_SIGMA_PX.1);
            let amp = bg.blob_intensity * rng.random_range(0.5..=1.0);
            (cx, cy, 1.0 / (2.0 * sigma * sigma), amp)
        })
        .collect();
    let mut out = vec![bg.base_intensity; w * h];
    for y in 0..h {
        for x in 0..w {
            let v = blobs
                .iter()
                .map(|&(cx, cy, inv, amp)| {
                    let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                    amp * (-d2 * inv).exp()
                })
                .fold(0.0, f64::max);
            out[y * w + x] += v;
        }
    }
    out
}

fn sample_particles(cfg: &GenConfig, rng: &mut ChaCha8Rng) -> Result<(Vec<ParticleSpec>, bool)> {
    let polymers: Vec<Polymer> = cfg.polymer_mix.keys().copied().collect();
    let weights = WeightedIndex::new(cfg.polymer_mix.values().copied())
        .map_err(|e| Error::InvalidConfig(format!("polymer_mix: {e}")))?;
    let [pmin, pmax] = cfg.particles_per_image;
    let n = rng.random_range(pmin..=pmax);
    let (w, h) = (cfg.image_w as f64, cfg.image_h as f64);
    let mut placed: Vec<ParticleSpec> = Vec::with_capacity(n);
    let mut overlaps = false;
    for _ in 0..n {
        let polymer = polymers[weights.sample(rng)];
        let nominal = polymer.nominal_diameter_um().expect("validated mix");
        let jitter = cfg.diameter_jitter;
        let diameter_um = nominal * (1.0 + rng.random_range(-jitter..=jitter));
        let extent_px = diameter_um / cfg.scale_um_per_px;
        if extent_px < 1.0 {
            return Err(Error::ParticleTooSmall { extent_px });
        }
        let eccentricity = rng.random_range(0.0..=cfg.max_eccentricity);
        let rotation = rng.random_range(0.0..PI);
        let [lo, hi] = cfg.peak_intensity;
        let peak_intensity = rng.random_range(lo..=hi);
        let a = extent_px / 2.0;
        let axis_range = |len: f64| {
            if len > 2.0 * a + 2.0 {
                (a + 1.0, len - 1.0 - a)
            } else {
                (0.0, len - 1.0)
            }
        };
        let (xr, yr) = (axis_range(w), axis_range(h));
        let conflicts = |c: (f64, f64), others: &[ParticleSpec]| {
            others.iter().any(|o| {
                let reach = a + o.extent_px(cfg.scale_um_per_px) / 2.0 + PLACEMENT_GAP_PX;
                (c.0 - o.center.0).hypot(c.1 - o.center.1) < reach
            })
        };
        let mut center = (0.0, 0.0);
        let mut clash = true;
        for _ in 0..PLACEMENT_ATTEMPTS {
            center = (rng.random_range(xr.0..=xr.1), rng.random_range(yr.0..=yr.1));
            clash = conflicts(center, &placed);
            if !clash || cfg.allow_overlap {
                break;
            }
        }
        if clash && !cfg.allow_overlap {
            // no free spot left; the particle is not rendered
            continue;
        }
        overlaps |= clash;
        let spec = ParticleSpec {
            polymer,
            diameter_um,
            center,
            eccentricity,
            rotation,
            peak_intensity,
        };
        spec.validate()?;
        placed.push(spec);
    }
    Ok((placed, overlaps))
}

/// Noise-free scene for `index`, plus the sampled particles and the
/// overlap flag. The generator's RNG stream continues into the noise
/// stage, so this shares its seed with [`generate_image`].
fn scene(cfg: &GenConfig, index: usize) -> Result<(SceneLayers, Vec<ParticleSpec>, bool, ChaCha8Rng, u64)> {
    cfg.validate()?;
    if index >= cfg.n_images {
        return Err(Error::ValueOutOfRange(format!(
            "image index {index} outside [0, {})",
            cfg.n_images
        )));
    }
    let seed = image_seed(cfg.master_seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (particles, overlaps) = sample_particles(cfg, &mut rng)?;
    let background = render_background(cfg, &mut rng);
    let (layer, mask) = render_particles(
        &particles,
        cfg.image_w,
        cfg.image_h,
        cfg.scale_um_per_px,
        cfg.edge_sigma_px,
    );
    let layers = SceneLayers {
        width: cfg.image_w,
        height: cfg.image_h,
        background,
        particles: layer,
        mask,
    };
    Ok((layers, particles, overlaps, rng, seed))
}

pub fn render_layers(cfg: &GenConfig, index: usize) -> Result<SceneLayers> {
    scene(cfg, index).map(|s| s.0)
}

pub fn generate_image(cfg: &GenConfig, index: usize) -> Result<GeneratedImage> {
    let (layers, particles, overlaps, mut rng, seed) = scene(cfg, index)?;
    let normal = Normal::new(0.0, cfg.noise.gaussian_sigma).expect("sigma validated");
    let n = layers.width * layers.height;
    let mut pixels = Vec::with_capacity(n * 3);
    for i in 0..n {
        let v = layers.intensity(i);
        for gain in CHANNEL_GAINS {
            let mut c = gain * v;
            if cfg.noise.poisson_enabled && c > 0.0 {
                let lambda = c * POISSON_FULL_SCALE;
                c = Poisson::new(lambda).expect("positive rate").sample(&mut rng) / POISSON_FULL_SCALE;
            }
            if cfg.noise.gaussian_sigma > 0.0 {
                c += normal.sample(&mut rng);
            }
            pixels.push((c.clamp(0.0, 1.0) * 255.0).round());
        }
    }
    let image = FluorescenceImage::new(layers.width, layers.height, pixels, false, cfg.scale_um_per_px)?;
    Ok(GeneratedImage {
        image,
        mask: layers.mask,
        particles,
        overlaps,
        seed,
    })
}

/// Writes `images/` and `masks/` PNGs plus `manifest.jsonl` under
/// `out_dir`. Every entry starts in the train split.
pub fn generate_dataset(cfg: &GenConfig, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    for sub in ["images", "masks"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let entries = (0..cfg.n_images)
        .into_par_iter()
        .map(|i| {
            let g = generate_image(cfg, i)?;
            let image_path = format!("images/img_{i:04}.png");
            let mask_path = format!("masks/img_{i:04}.png");
            io::write_image(out_dir.join(&image_path), &g.image)?;
            io::write_mask(out_dir.join(&mask_path), &g.mask)?;
            Ok(ManifestEntry {
                image_path,
                mask_path,
                split: Split::Train,
                provenance: cfg.provenance,
                particles: g.particles,
                seed: g.seed,
                overlaps: g.overlaps,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest::new(cfg.master_seed, cfg.scale_um_per_px, entries, out_dir);
    manifest.save(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Tags `round(train_fraction · n)` seeded-shuffled entries as train and
/// the rest as test. Entry order is preserved.
pub fn split_dataset(manifest: &DatasetManifest, train_fraction: f64, seed: u64) -> Result<DatasetManifest> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::ValueOutOfRange(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n = manifest.len();
    let n_train = (train_fraction * n as f64).round() as usize;
    let degenerate = |side| Error::DegenerateSplit {
        side,
        n,
        fraction: train_fraction,
    };
    if n_train == 0 {
        return Err(degenerate("train"));
    }
    if n_train >= n {
        return Err(degenerate("test"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = manifest.clone();
    for e in &mut out.entries {
        e.split = Split::Test;
    }
    for &i in &order[..n_train] {
        out.entries[i].split = Split::Train;
    }
    Ok(out)
}
