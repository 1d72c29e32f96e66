//! Region descriptors and the four-term grouping similarity.

use super::segment::{Planes, SegmentationMap};

pub const COLOR_BINS: usize = 25;
pub const TEXTURE_BINS: usize = 10;
pub const ORIENTATIONS: usize = 8;

/// Descriptor of one region during hierarchical grouping.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionFeatures {
    pub size: usize,
    /// Half-open pixel box `[x0, y0, x1, y1]`.
    pub bbox: [u32; 4],
    /// L1-normalized colour histogram, `COLOR_BINS` per channel.
    pub color: Vec<f32>,
    /// L1-normalized orientation histogram, `ORIENTATIONS * TEXTURE_BINS` per channel.
    pub texture: Vec<f32>,
}

impl RegionFeatures {
    pub fn bbox_area(a: &[u32; 4], b: &[u32; 4]) -> usize {
        let x0 = a[0].min(b[0]);
        let y0 = a[1].min(b[1]);
        let x1 = a[2].max(b[2]);
        let y1 = a[3].max(b[3]);
        (x1 - x0) as usize * (y1 - y0) as usize
    }

    /// Descriptor of the union of two regions.
    pub fn merge(&self, other: &RegionFeatures) -> RegionFeatures {
        let size = self.size + other.size;
        let (wa, wb) = (self.size as f32 / size as f32, other.size as f32 / size as f32);
        let mix = |a: &[f32], b: &[f32]| a.iter().zip(b).map(|(x, y)| wa * x + wb * y).collect();
        RegionFeatures {
            size,
            bbox: [
                self.bbox[0].min(other.bbox[0]),
                self.bbox[1].min(other.bbox[1]),
                self.bbox[2].max(other.bbox[2]),
                self.bbox[3].max(other.bbox[3]),
            ],
            color: mix(&self.color, &other.color),
            texture: mix(&self.texture, &other.texture),
        }
    }
}

/// Which terms enter the similarity sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimilarityTerms {
    pub color: bool,
    pub texture: bool,
    pub size: bool,
    pub fill: bool,
}

impl Default for SimilarityTerms {
    fn default() -> Self {
        SimilarityTerms { color: true, texture: true, size: true, fill: true }
    }
}

/// Per-term similarity components, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub color: f64,
    pub texture: f64,
    pub size: f64,
    pub fill: f64,
}

impl Similarity {
    pub fn total(&self, terms: SimilarityTerms) -> f64 {
        let mut s = 0.0;
        if terms.color {
            s += self.color;
        }
        if terms.texture {
            s += self.texture;
        }
        if terms.size {
            s += self.size;
        }
        if terms.fill {
            s += self.fill;
        }
        s
    }
}

fn intersection(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.min(*y) as f64).sum::<f64>().clamp(0.0, 1.0)
}

/// Colour, texture, size and fill similarity of two regions in an image of
/// `image_area` pixels. Summed with all terms enabled it lies in `[0, 4]`.
pub fn region_similarity(a: &RegionFeatures, b: &RegionFeatures, image_area: usize) -> Similarity {
    let im = image_area as f64;
    let joint = (a.size + b.size) as f64;
    let hull = RegionFeatures::bbox_area(&a.bbox, &b.bbox) as f64;
    Similarity {
        color: intersection(&a.color, &b.color),
        texture: intersection(&a.texture, &b.texture),
        size: (1.0 - joint / im).clamp(0.0, 1.0),
        fill: (1.0 - (hull - joint) / im).clamp(0.0, 1.0),
    }
}

fn normalize(h: &mut [f32]) {
    let total: f32 = h.iter().sum();
    if total > 0.0 {
        h.iter_mut().for_each(|v| *v /= total);
    }
}

/// Oriented derivative magnitudes per channel: `ORIENTATIONS` planes each.
fn orientation_responses(planes: &Planes) -> Vec<Vec<Vec<f32>>> {
    let smooth = planes.smoothed(1.0);
    let (w, h) = (planes.width, planes.height);
    smooth
        .channels
        .iter()
        .map(|c| {
            let at = |x: usize, y: usize| c[y * w + x];
            let mut out = vec![vec![0f32; w * h]; ORIENTATIONS];
            for y in 0..h {
                for x in 0..w {
                    let dx = 0.5 * (at((x + 1).min(w - 1), y) - at(x.saturating_sub(1), y));
                    let dy = 0.5 * (at(x, (y + 1).min(h - 1)) - at(x, y.saturating_sub(1)));
                    for (o, plane) in out.iter_mut().enumerate() {
                        let theta = std::f32::consts::PI * 2.0 * o as f32 / ORIENTATIONS as f32;
                        plane[y * w + x] = (theta.cos() * dx + theta.sin() * dy).max(0.0);
                    }
                }
            }
            out
        })
        .collect()
}

/// Initial descriptors for every region of a segmentation.
pub fn region_features(planes: &Planes, seg: &SegmentationMap) -> Vec<RegionFeatures> {
    let n_ch = planes.channels.len();
    let (w, h) = (planes.width, planes.height);
    let mut regions: Vec<RegionFeatures> = (0..seg.num_regions)
        .map(|_| RegionFeatures {
            size: 0,
            bbox: [u32::MAX, u32::MAX, 0, 0],
            color: vec![0.0; n_ch * COLOR_BINS],
            texture: vec![0.0; n_ch * ORIENTATIONS * TEXTURE_BINS],
        })
        .collect();

    let responses = orientation_responses(planes);
    let mut max_resp = vec![0f32; n_ch];
    for (c, planes_c) in responses.iter().enumerate() {
        for p in planes_c {
            for v in p {
                max_resp[c] = max_resp[c].max(*v);
            }
        }
    }

    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let r = &mut regions[seg.labels[i] as usize];
            r.size += 1;
            r.bbox[0] = r.bbox[0].min(x as u32);
            r.bbox[1] = r.bbox[1].min(y as u32);
            r.bbox[2] = r.bbox[2].max(x as u32 + 1);
            r.bbox[3] = r.bbox[3].max(y as u32 + 1);
            for c in 0..n_ch {
                let v = planes.channels[c][i].clamp(0.0, 255.0);
                let bin = ((v / 256.0) * COLOR_BINS as f32) as usize;
                r.color[c * COLOR_BINS + bin.min(COLOR_BINS - 1)] += 1.0;
                for o in 0..ORIENTATIONS {
                    let m = max_resp[c];
                    let v = responses[c][o][i];
                    let bin = if m > 0.0 { ((v / m) * TEXTURE_BINS as f32) as usize } else { 0 };
                    r.texture[(c * ORIENTATIONS + o) * TEXTURE_BINS + bin.min(TEXTURE_BINS - 1)] += 1.0;
                }
            }
        }
    }
    for r in &mut regions {
        normalize(&mut r.color);
        normalize(&mut r.texture);
    }
    regions
}

/// Pairs of 4-adjacent regions, each listed once as `(low, high)`, sorted.
pub fn adjacent_pairs(seg: &SegmentationMap) -> Vec<(u32, u32)> {
    let mut pairs = std::collections::BTreeSet::new();
    let (w, h) = (seg.width, seg.height);
    for y in 0..h {
        for x in 0..w {
            let a = seg.label(x, y);
            if x + 1 < w {
                let b = seg.label(x + 1, y);
                if a != b {
                    pairs.insert((a.min(b), a.max(b)));
                }
            }
            if y + 1 < h {
                let b = seg.label(x, y + 1);
                if a != b {
                    pairs.insert((a.min(b), a.max(b)));
                }
            }
        }
    }
    pairs.into_iter().collect()
}
