//! Connected components, Feret diameters and size histograms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{BinaryMask, Detection};

/// Upper edges of the default size classes, micrometres.
pub const DEFAULT_SIZE_BINS_UM: [f64; 3] = [100.0, 300.0, 700.0];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

impl TryFrom<u8> for Connectivity {
    type Error = Error;

    fn try_from(n: u8) -> Result<Self> {
        match n {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            other => Err(Error::InvalidConfig(format!("connectivity must be 4 or 8, got {other}"))),
        }
    }
}

struct UnionFind(Vec<u32>);

impl UnionFind {
    fn find(&mut self, mut a: u32) -> u32 {
        while self.0[a as usize] != a {
            let parent = self.0[a as usize];
            self.0[a as usize] = self.0[parent as usize];
            a = parent;
        }
        a
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi as usize] = lo;
        }
    }
}

/// Two-pass labeling. Returns per-pixel labels (`0` = background, then
/// `1..=n` in raster order of each component's first pixel) and `n`.
pub fn label(mask: &BinaryMask, connectivity: Connectivity) -> (Vec<u32>, usize) {
    let (w, h) = (mask.width(), mask.height());
    let v = mask.values();
    let mut labels = vec![0u32; w * h];
    let mut uf = UnionFind(vec![0]);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if v[i] == 0 {
                continue;
            }
            let mut neighbors = [0u32; 4];
            let mut k = 0;
            let mut look = |nx: usize, ny: usize| {
                let l = labels[ny * w + nx];
                if l != 0 {
                    neighbors[k] = l;
                    k += 1;
                }
            };
            if x > 0 {
                look(x - 1, y);
            }
            if y > 0 {
                look(x, y - 1);
                if connectivity == Connectivity::Eight {
                    if x > 0 {
                        look(x - 1, y - 1);
                    }
                    if x + 1 < w {
                        look(x + 1, y - 1);
                    }
                }
            }
            labels[i] = if k == 0 {
                let l = uf.0.len() as u32;
                uf.0.push(l);
                l
            } else {
                let m = *neighbors[..k].iter().min().unwrap();
                for &n in &neighbors[..k] {
                    uf.union(m, n);
                }
                m
            };
        }
    }
    let mut compact = vec![0u32; uf.0.len()];
    let mut n = 0;
    for l in labels.iter_mut().filter(|l| **l != 0) {
        let root = uf.find(*l) as usize;
        if compact[root] == 0 {
            n += 1;
            compact[root] = n;
        }
        *l = compact[root];
    }
    (labels, n as usize)
}

/// Pixel coordinates `(x, y)` of each component, ordered as in [`label`].
pub fn component_pixels(mask: &BinaryMask, connectivity: Connectivity) -> Vec<Vec<(usize, usize)>> {
    let (labels, n) = label(mask, connectivity);
    let w = mask.width();
    let mut out = vec![Vec::new(); n];
    for (i, &l) in labels.iter().enumerate() {
        if l != 0 {
            out[l as usize - 1].push((i % w, i / w));
        }
    }
    out
}

/// Labels the mask and measures each component.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity, scale_um_per_px: f64) -> Vec<Detection> {
    component_pixels(mask, connectivity)
        .into_iter()
        .enumerate()
        .map(|(id, px)| {
            let n = px.len() as f64;
            let (sx, sy) = px.iter().fold((0.0, 0.0), |(a, b), &(x, y)| (a + x as f64, b + y as f64));
            let x0 = px.iter().map(|p| p.0).min().unwrap();
            let x1 = px.iter().map(|p| p.0).max().unwrap();
            let y0 = px.iter().map(|p| p.1).min().unwrap();
            let y1 = px.iter().map(|p| p.1).max().unwrap();
            let feret_px = feret_diameter(&px);
            Detection {
                id,
                pixel_area: px.len(),
                centroid: (sx / n, sy / n),
                bbox: (x0, y0, x1, y1),
                feret_px,
                feret_um: feret_px * scale_um_per_px,
            }
        })
        .collect()
}

fn cross(o: (i64, i64), a: (i64, i64), b: (i64, i64)) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Convex hull of pixel centers, counter-clockwise, without collinear
/// points.
pub fn convex_hull(points: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let mut pts: Vec<(i64, i64)> = points.iter().map(|&(x, y)| (x as i64, y as i64)).collect();
    pts.sort_unstable();
    pts.dedup();
    if pts.len() <= 2 {
        return pts.into_iter().map(|(x, y)| (x as usize, y as usize)).collect();
    }
    let mut hull: Vec<(i64, i64)> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(i64, i64)>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull.into_iter().map(|(x, y)| (x as usize, y as usize)).collect()
}

/// Largest distance between two pixel centers of a component.
pub fn feret_diameter(pixels: &[(usize, usize)]) -> f64 {
    let hull = convex_hull(pixels);
    let mut best = 0i64;
    for (i, a) in hull.iter().enumerate() {
        for b in &hull[i + 1..] {
            let dx = a.0 as i64 - b.0 as i64;
            let dy = a.1 as i64 - b.1 as i64;
            best = best.max(dx * dx + dy * dy);
        }
    }
    (best as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeReport {
    /// Bin edges, micrometres.
    pub bins_um: Vec<f64>,
    /// `bins_um.len() + 1` counts: below the first edge, between
    /// consecutive edges, and at or above the last.
    pub counts: Vec<usize>,
    pub labels: Vec<String>,
    pub total: usize,
}

impl SizeReport {
    pub fn merge(&mut self, other: &SizeReport) {
        assert_eq!(self.bins_um, other.bins_um, "size reports use different bins");
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
    }
}

pub fn bin_labels(bins: &[f64]) -> Vec<String> {
    if bins.is_empty() {
        return vec!["all".into()];
    }
    let mut labels = vec![format!("< {} um", bins[0])];
    for w in bins.windows(2) {
        labels.push(format!("{} to {} um", w[0], w[1]));
    }
    labels.push(format!(">= {} um", bins[bins.len() - 1]));
    labels
}

/// Histogram of Feret diameters in micrometres.
pub fn size_report(detections: &[Detection], scale_um_per_px: f64, bins: &[f64]) -> Result<SizeReport> {
    if bins.iter().any(|b| !b.is_finite()) || bins.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidBins(format!("bins must be finite and strictly increasing, got {bins:?}")));
    }
    let mut counts = vec![0usize; bins.len() + 1];
    for d in detections {
        let um = d.feret_px * scale_um_per_px;
        counts[bins.partition_point(|&b| b <= um)] += 1;
    }
    Ok(SizeReport {
        bins_um: bins.to_vec(),
        counts,
        labels: bin_labels(bins),
        total: detections.len(),
    })
}
