//! RoI max-pooling, spatial pyramid pooling and the per-region warp.

use serde::{Deserialize, Serialize};

use super::tensor::{Real, Tensor};
use crate::geometry::BoundingBox;

/// How a region's features are reduced to a fixed-length vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Single `rows x cols` grid.
    Grid { rows: usize, cols: usize },
    /// Concatenated square grids, e.g. `[1, 2]` for 1x1 and 2x2.
    Pyramid { levels: Vec<usize> },
}

impl Default for Pooling {
    fn default() -> Self {
        Pooling::Grid { rows: 4, cols: 4 }
    }
}

impl Pooling {
    pub fn grids(&self) -> Vec<(usize, usize)> {
        match self {
            Pooling::Grid { rows, cols } => vec![(*rows, *cols)],
            Pooling::Pyramid { levels } => levels.iter().map(|&l| (l, l)).collect(),
        }
    }

    pub fn cells(&self) -> usize {
        self.grids().iter().map(|(h, w)| h * w).sum()
    }

    pub fn is_valid(&self) -> bool {
        let g = self.grids();
        !g.is_empty() && g.iter().all(|&(h, w)| h > 0 && w > 0)
    }
}

/// Feature-map window `[x0, x1) x [y0, y1)` of an image-space box, rounded
/// outward and kept at least one cell wide.
pub fn project_roi(roi: &BoundingBox, stride: usize, fh: usize, fw: usize) -> (usize, usize, usize, usize) {
    let s = stride as f64;
    let clamp = |v: f64, hi: usize| (v.max(0.0) as usize).min(hi);
    let mut x0 = clamp((roi.x_min / s).floor(), fw);
    let mut y0 = clamp((roi.y_min / s).floor(), fh);
    let x1 = clamp((roi.x_max / s).ceil(), fw);
    let y1 = clamp((roi.y_max / s).ceil(), fh);
    if x0 >= fw {
        x0 = fw - 1;
    }
    if y0 >= fh {
        y0 = fh - 1;
    }
    (x0, y0, x1.max(x0 + 1), y1.max(y0 + 1))
}

/// Max-pools a feature window into a grid; returns values and flat argmax
/// indices into `featmap.data`, both laid out `D x rows x cols`.
pub fn pool_window<T: Real>(
    featmap: &Tensor<T>,
    window: (usize, usize, usize, usize),
    grid: (usize, usize),
) -> (Vec<T>, Vec<u32>) {
    let (d, fh, fw) = featmap.chw();
    let (x0, y0, x1, y1) = window;
    let (gh, gw) = grid;
    let (ww, wh) = (x1 - x0, y1 - y0);
    let mut vals = vec![T::zero(); d * gh * gw];
    let mut arg = vec![0u32; d * gh * gw];
    // Cell i spans [floor(i*len/g), ceil((i+1)*len/g)), never empty.
    let span = |i: usize, len: usize, g: usize| (i * len / g, ((i + 1) * len).div_ceil(g));
    for gy in 0..gh {
        let (ya, yb) = span(gy, wh, gh);
        for gx in 0..gw {
            let (xa, xb) = span(gx, ww, gw);
            for c in 0..d {
                let base = c * fh * fw;
                let mut best = base + (y0 + ya) * fw + x0 + xa;
                for y in y0 + ya..y0 + yb {
                    for x in x0 + xa..x0 + xb {
                        let idx = base + y * fw + x;
                        if featmap.data[idx] > featmap.data[best] {
                            best = idx;
                        }
                    }
                }
                let out = (c * gh + gy) * gw + gx;
                vals[out] = featmap.data[best];
                arg[out] = best as u32;
            }
        }
    }
    (vals, arg)
}

/// Pools an image-space RoI from a feature map of total stride `stride`
/// into a `D x rows x cols` tensor.
pub fn roi_pool<T: Real>(featmap: &Tensor<T>, roi: &BoundingBox, stride: usize, grid: (usize, usize)) -> Tensor<T> {
    let (d, fh, fw) = featmap.chw();
    let window = project_roi(roi, stride, fh, fw);
    let (vals, _) = pool_window(featmap, window, grid);
    Tensor::from_vec(&[d, grid.0, grid.1], vals)
}

/// Concatenation of [`roi_pool`] over every pyramid level.
pub fn spp_pool<T: Real>(featmap: &Tensor<T>, roi: &BoundingBox, stride: usize, levels: &[(usize, usize)]) -> Vec<T> {
    levels.iter().flat_map(|&g| roi_pool(featmap, roi, stride, g).data).collect()
}

/// Pools a window under a pooling spec; returns the feature vector and argmax.
pub fn pool_features<T: Real>(
    featmap: &Tensor<T>,
    window: (usize, usize, usize, usize),
    pooling: &Pooling,
) -> (Vec<T>, Vec<u32>) {
    let mut vals = Vec::with_capacity(featmap.chw().0 * pooling.cells());
    let mut arg = Vec::with_capacity(vals.capacity());
    for g in pooling.grids() {
        let (v, a) = pool_window(featmap, window, g);
        vals.extend(v);
        arg.extend(a);
    }
    (vals, arg)
}

/// Bilinear resample of an image-space box of a `C x H x W` tensor to
/// `out_h x out_w`.
pub fn warp_region<T: Real>(image: &Tensor<T>, roi: &BoundingBox, out_h: usize, out_w: usize) -> Tensor<T> {
    let (c, h, w) = image.chw();
    let sx = roi.width() / out_w as f64;
    let sy = roi.height() / out_h as f64;
    let mut out = Tensor::zeros(&[c, out_h, out_w]);
    let sample = |v: f64, len: usize| {
        let v = v.clamp(0.0, (len - 1) as f64);
        let i0 = v.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, v - i0 as f64)
    };
    for oy in 0..out_h {
        let (y0, y1, fy) = sample(roi.y_min + (oy as f64 + 0.5) * sy - 0.5, h);
        for ox in 0..out_w {
            let (x0, x1, fx) = sample(roi.x_min + (ox as f64 + 0.5) * sx - 0.5, w);
            for ch in 0..c {
                let p = |y: usize, x: usize| image.data[(ch * h + y) * w + x].f64();
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bot = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                out.data[(ch * out_h + oy) * out_w + ox] = T::of(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    fn ramp() -> Tensor<f64> {
        Tensor::from_vec(&[1, 4, 4], (1..=16).map(|v| v as f64).collect())
    }

    #[test]
    fn quadrant_maxima() {
        let out = roi_pool(&ramp(), &b(0.0, 0.0, 32.0, 32.0), 8, (2, 2));
        assert_eq!(out.data, vec![6.0, 8.0, 14.0, 16.0]);
    }

    #[test]
    fn single_cell_is_replicated() {
        // Row 1, column 2 of the feature map holds 7.
        let out = roi_pool(&ramp(), &b(17.0, 9.0, 22.0, 15.0), 8, (2, 2));
        assert_eq!(out.data, vec![7.0; 4]);
    }

    #[test]
    fn one_by_one_is_window_max() {
        let out = roi_pool(&ramp(), &b(0.0, 0.0, 16.0, 16.0), 8, (1, 1));
        assert_eq!(out.data, vec![6.0]);
    }

    #[test]
    fn pyramid_is_concatenation() {
        let roi = b(0.0, 0.0, 24.0, 32.0);
        let fm = ramp();
        assert_eq!(spp_pool(&fm, &roi, 8, &[(1, 1)]), roi_pool(&fm, &roi, 8, (1, 1)).data);
        let both = spp_pool(&fm, &roi, 8, &[(1, 1), (2, 2)]);
        assert_eq!(both.len(), 5);
        let mut expected = roi_pool(&fm, &roi, 8, (1, 1)).data;
        expected.extend(roi_pool(&fm, &roi, 8, (2, 2)).data);
        assert_eq!(both, expected);
    }

    #[test]
    fn outside_values_are_ignored() {
        let roi = b(8.0, 8.0, 24.0, 24.0);
        let base = roi_pool(&ramp(), &roi, 8, (2, 2));
        let mut fm = ramp();
        for (i, v) in fm.data.iter_mut().enumerate() {
            let (y, x) = (i / 4, i % 4);
            if !(1..3).contains(&y) || !(1..3).contains(&x) {
                *v = 1000.0;
            }
        }
        assert_eq!(roi_pool(&fm, &roi, 8, (2, 2)), base);
    }

    #[test]
    fn warp_identity_and_midpoint() {
        let img = Tensor::from_vec(&[1, 3, 4], (0..12).map(|v| v as f64 * 1.5).collect());
        let same = warp_region(&img, &b(0.0, 0.0, 4.0, 3.0), 3, 4);
        assert_eq!(same, img);

        let patch = Tensor::<f64>::from_vec(&[1, 2, 2], vec![1.0, 3.0, 5.0, 11.0]);
        let up = warp_region(&patch, &b(0.0, 0.0, 2.0, 2.0), 3, 3);
        assert!((up.at3(0, 1, 1) - 5.0).abs() < 1e-12);

        let flat = Tensor::<f64>::from_vec(&[2, 5, 5], vec![0.25; 50]);
        let w = warp_region(&flat, &b(1.0, 1.5, 4.0, 3.5), 7, 2);
        assert!(w.data.iter().all(|v| (v - 0.25).abs() < 1e-12));
    }
}
