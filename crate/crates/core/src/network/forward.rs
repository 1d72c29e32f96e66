//! Region feature extraction and the per-image loss with backpropagation,
//! shared by training, inference and gradient checking.

use std::time::{Duration, Instant};

use super::layers::{fold, ConvCache};
use super::loss::multitask_loss;
use super::model::{softmax, Grads, NetworkParams, PipelineMode};
use super::pool::{pool_features, project_roi, warp_region};
use super::tensor::{Real, Tensor};
use super::NetworkError;
use crate::geometry::{BoundingBox, LogoClassId};

/// A training region: label plus normalized regression target for foreground.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiExample {
    pub bbox: BoundingBox,
    pub label: LogoClassId,
    pub target: Option<[f64; 4]>,
}

struct MapSource<T> {
    caches: Vec<ConvCache<T>>,
    shape: Vec<usize>,
}

/// Pooled features of every region, `rows x feature_len` row-major.
pub(crate) struct RegionFeatures<T> {
    pub x: Vec<T>,
    pub rows: usize,
    pub backbone_passes: usize,
    pub backbone_time: Duration,
    pub pool_time: Duration,
    maps: Vec<MapSource<T>>,
    /// Per row: feature map index and argmax into that map.
    sources: Vec<(usize, Vec<u32>)>,
}

pub(crate) fn region_features<T: Real>(
    params: &NetworkParams<T>,
    image: &Tensor<T>,
    rois: &[BoundingBox],
    keep: bool,
) -> Result<RegionFeatures<T>, NetworkError> {
    let (_, h, w) = image.chw();
    params.check_input(h, w)?;
    let flen = params.arch.pooled_len();
    let mut out = RegionFeatures {
        x: Vec::with_capacity(rois.len() * flen),
        rows: rois.len(),
        backbone_passes: 0,
        backbone_time: Duration::ZERO,
        pool_time: Duration::ZERO,
        maps: Vec::new(),
        sources: Vec::new(),
    };
    if rois.is_empty() {
        return Ok(out);
    }
    match params.arch.mode {
        PipelineMode::SharedMap => {
            let t0 = Instant::now();
            let (fmap, caches) = params.backbone(image, keep)?;
            out.backbone_passes = 1;
            out.backbone_time = t0.elapsed();
            let t1 = Instant::now();
            let (_, fh, fw) = fmap.chw();
            for roi in rois {
                let window = project_roi(roi, params.stride(), fh, fw);
                let (v, arg) = pool_features(&fmap, window, &params.arch.pooling);
                out.x.extend(v);
                if keep {
                    out.sources.push((0, arg));
                }
            }
            out.pool_time = t1.elapsed();
            if keep {
                out.maps.push(MapSource { caches, shape: fmap.shape });
            }
        }
        PipelineMode::PerRegion => {
            let s = params.arch.warp_size;
            for roi in rois {
                let t0 = Instant::now();
                let crop = warp_region(image, roi, s, s);
                let (fmap, caches) = params.backbone(&crop, keep)?;
                out.backbone_passes += 1;
                out.backbone_time += t0.elapsed();
                let t1 = Instant::now();
                let (_, fh, fw) = fmap.chw();
                let (v, arg) = pool_features(&fmap, (0, 0, fw, fh), &params.arch.pooling);
                out.x.extend(v);
                out.pool_time += t1.elapsed();
                if keep {
                    out.sources.push((out.maps.len(), arg));
                    out.maps.push(MapSource { caches, shape: fmap.shape });
                }
            }
        }
    }
    Ok(out)
}

impl<T: Real> RegionFeatures<T> {
    /// Routes feature gradients back through pooling and the backbone.
    fn backward(&self, params: &NetworkParams<T>, dx: &[T], grads: &mut Grads<T>) {
        let flen = params.arch.pooled_len();
        let mut maps: Vec<Tensor<T>> = self.maps.iter().map(|m| Tensor::zeros(&m.shape)).collect();
        for (r, (m, arg)) in self.sources.iter().enumerate() {
            let g = &mut maps[*m].data;
            for (j, idx) in arg.iter().enumerate() {
                g[*idx as usize] += dx[r * flen + j];
            }
        }
        for (src, g) in self.maps.iter().zip(maps) {
            params.backbone_backward(&src.caches, g, grads);
        }
    }

    fn fold_pattern(&self, params: &NetworkParams<T>, acc: &mut u64) {
        for m in &self.maps {
            for (c, layer) in m.caches.iter().zip(&params.conv) {
                c.fold_pattern(layer.spec.relu, acc);
            }
        }
        for (m, arg) in &self.sources {
            fold(acc, *m as u64);
            for a in arg {
                fold(acc, *a as u64);
            }
        }
    }
}

/// Mean multitask loss of one image's regions, scaled by `scale`.
///
/// Accumulates `scale`-weighted gradients into `grads` when given. `pattern`
/// receives a fingerprint of every piecewise branch taken (ReLU, max
/// selections, smooth-L1 regime).
pub(crate) fn image_loss<T: Real>(
    params: &NetworkParams<T>,
    image: &Tensor<T>,
    rois: &[RoiExample],
    lambda: f64,
    scale: f64,
    grads: Option<&mut Grads<T>>,
    pattern: Option<&mut u64>,
) -> Result<f64, NetworkError> {
    if rois.is_empty() {
        return Ok(0.0);
    }
    let keep = grads.is_some() || pattern.is_some();
    let boxes: Vec<BoundingBox> = rois.iter().map(|r| r.bbox).collect();
    let feats = region_features(params, image, &boxes, keep)?;
    let rows = feats.rows;
    let acts = params.trunk_forward(feats.x.clone(), rows);
    let h = acts.last().expect("trunk input");
    let (logits, offsets) = params.heads(h, rows);
    let (nl, no) = (params.num_classes + 1, 4 * params.num_classes);

    let mut total = 0.0;
    let mut dlogits = vec![T::zero(); rows * nl];
    let mut doffsets = vec![T::zero(); rows * no];
    let mut acc = 0u64;
    for (r, roi) in rois.iter().enumerate() {
        let probs = softmax(&logits[r * nl..(r + 1) * nl]);
        let off: Vec<f64> = offsets[r * no..(r + 1) * no].iter().map(|v| v.f64()).collect();
        let parts = multitask_loss(&probs, &off, roi.label, roi.target, lambda);
        total += parts.total * scale;
        for (d, g) in dlogits[r * nl..].iter_mut().zip(&parts.grad_logits) {
            *d = T::of(g * scale);
        }
        for (d, g) in doffsets[r * no..].iter_mut().zip(&parts.grad_offsets) {
            *d = T::of(g * scale);
        }
        if let (Some(t), true) = (roi.target, pattern.is_some()) {
            let base = 4 * (roi.label.index() - 1);
            for k in 0..4 {
                fold(&mut acc, ((off[base + k] - t[k]).abs() < 1.0) as u64);
            }
        }
    }
    if let Some(p) = pattern {
        feats.fold_pattern(params, &mut acc);
        if params.arch.fc_relu {
            for a in &acts[1..] {
                for v in a {
                    fold(&mut acc, (*v > T::zero()) as u64);
                }
            }
        }
        *p = acc;
    }
    if let Some(grads) = grads {
        let slot = params.head_slot();
        let hd = params.head_in_dim();
        let mut dh = vec![T::zero(); rows * hd];
        {
            let (cw, rest) = grads[slot..].split_at_mut(1);
            let (cb, rest) = rest.split_at_mut(1);
            let (rw, rb) = rest.split_at_mut(1);
            let a = params.cls_head.backward(h, &dlogits, rows, &mut cw[0], &mut cb[0]);
            let b = params.reg_head.backward(h, &doffsets, rows, &mut rw[0], &mut rb[0]);
            for ((d, x), y) in dh.iter_mut().zip(a).zip(b) {
                *d = x + y;
            }
        }
        let dx = params.trunk_backward(&acts, dh, rows, grads);
        feats.backward(params, &dx, grads);
    }
    Ok(total)
}
