//! SGD fine-tuning with momentum over sampled region minibatches.

use image::RgbImage;
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;

use super::forward::{image_loss, RoiExample};
use super::labels::{assign_roi_labels, LabeledRoi, TrainConfig};
use super::model::NetworkParams;
use super::tensor::image_tensor;
use super::NetworkError;
use crate::dataset::Dataset;
use crate::geometry::BoundingBox;
use crate::rng::{derive_seed, stream_rng};

/// Attempts at drawing a minibatch with at least one foreground region.
const RESAMPLE_ATTEMPTS: usize = 10;
/// Lower bound on the per-coordinate target standard deviation.
const MIN_TARGET_STD: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: NetworkParams<f32>,
    /// One record per completed iteration; skipped minibatches leave gaps.
    pub loss_trace: Vec<LossRecord>,
    /// Minibatches dropped for having no foreground regions.
    pub skipped_batches: usize,
}

/// Labelled regions of every training image (ground truth added per config).
pub fn label_dataset(ds: &Dataset, proposals: &[Vec<BoundingBox>], cfg: &TrainConfig) -> Vec<Vec<LabeledRoi>> {
    ds.annotations
        .par_iter()
        .zip(proposals.par_iter())
        .map(|(ann, props)| {
            let mut cands: Vec<BoundingBox> = props.iter().take(cfg.max_proposals).copied().collect();
            if cfg.include_gt {
                cands.extend(ann.objects.iter().map(|o| o.bbox));
            }
            assign_roi_labels(&cands, &ann.objects, cfg)
        })
        .collect()
}

/// Mean and floored standard deviation of foreground targets.
pub fn target_statistics(labels: &[Vec<LabeledRoi>]) -> ([f64; 4], [f64; 4]) {
    let mut sum = [0.0; 4];
    let mut sq = [0.0; 4];
    let mut n = 0usize;
    for t in labels.iter().flatten().filter_map(|r| r.target) {
        for (k, v) in t.to_array().iter().enumerate() {
            sum[k] += v;
            sq[k] += v * v;
        }
        n += 1;
    }
    if n == 0 {
        return ([0.0; 4], [1.0; 4]);
    }
    let mean = sum.map(|s| s / n as f64);
    let mut std = [0.0; 4];
    for k in 0..4 {
        std[k] = (sq[k] / n as f64 - mean[k] * mean[k]).max(0.0).sqrt().max(MIN_TARGET_STD);
    }
    (mean, std)
}

fn sample_rois<R: Rng>(rng: &mut R, pool: &[LabeledRoi], cfg: &TrainConfig, mean: &[f64; 4], std: &[f64; 4]) -> Vec<RoiExample> {
    let fg: Vec<&LabeledRoi> = pool.iter().filter(|r| r.target.is_some()).collect();
    let bg: Vec<&LabeledRoi> = pool.iter().filter(|r| r.target.is_none()).collect();
    let want_fg = (cfg.fg_fraction * cfg.rois_per_image as f64).round() as usize;
    let n_fg = want_fg.min(fg.len());
    let n_bg = (cfg.rois_per_image - n_fg).min(bg.len());
    let mut out = Vec::with_capacity(n_fg + n_bg);
    for i in sample(rng, fg.len(), n_fg) {
        let r = fg[i];
        let t = r.target.expect("foreground").to_array();
        let norm = [0, 1, 2, 3].map(|k| (t[k] - mean[k]) / std[k]);
        out.push(RoiExample { bbox: r.bbox, label: r.label, target: Some(norm) });
    }
    for i in sample(rng, bg.len(), n_bg) {
        out.push(RoiExample { bbox: bg[i].bbox, label: bg[i].label, target: None });
    }
    out
}

/// Trains a freshly initialized network.
///
/// `images[i]` and `proposals[i]` belong to `ds.annotations[i]`. The result
/// depends only on the inputs and `cfg.seed`, not on the thread count.
pub fn train(
    ds: &Dataset,
    images: &[RgbImage],
    proposals: &[Vec<BoundingBox>],
    cfg: &TrainConfig,
) -> Result<TrainOutput, NetworkError> {
    cfg.validate()?;
    if images.len() != ds.len() || proposals.len() != ds.len() {
        return Err(NetworkError::InvalidConfig(format!(
            "{} annotations, {} images, {} proposal sets",
            ds.len(),
            images.len(),
            proposals.len()
        )));
    }
    if ds.is_empty() {
        return Err(NetworkError::InvalidConfig("empty training set".into()));
    }
    if let Some(a) = ds.annotations.iter().zip(proposals).find(|(_, p)| p.is_empty()) {
        return Err(NetworkError::MissingProposals(a.0.image.clone()));
    }
    let labels = label_dataset(ds, proposals, cfg);
    let (mean, std) = target_statistics(&labels);
    let mut params = NetworkParams::<f32>::init(&cfg.arch, ds.brand_map.num_classes(), derive_seed(cfg.seed, "init"))?;
    params.target_mean = mean;
    params.target_std = std;
    for (ann, img) in ds.annotations.iter().zip(images) {
        if let Err(e) = params.check_input(img.height() as usize, img.width() as usize) {
            log::error!("{}: {e}", ann.image);
            return Err(e);
        }
    }

    let mut velocity = params.zero_grads();
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut skipped = 0;
    let batch_seed = derive_seed(cfg.seed, "batch");
    let n_img = cfg.images_per_batch.min(ds.len());
    for it in 0..cfg.iterations {
        let mut rng = stream_rng(batch_seed, it as u64);
        let mut batch = Vec::new();
        for _ in 0..RESAMPLE_ATTEMPTS {
            let chosen = sample(&mut rng, ds.len(), n_img).into_vec();
            batch = chosen
                .into_iter()
                .map(|i| (i, sample_rois(&mut rng, &labels[i], cfg, &mean, &std)))
                .collect::<Vec<_>>();
            if batch.iter().any(|(_, r)| r.iter().any(|x| x.target.is_some())) {
                break;
            }
            batch.clear();
        }
        if batch.is_empty() {
            log::warn!("iteration {it}: {}", NetworkError::NoForegroundRoIs);
            skipped += 1;
            continue;
        }
        let total: usize = batch.iter().map(|(_, r)| r.len()).sum();
        let scale = 1.0 / total as f64;
        let parts = batch
            .par_iter()
            .map(|(i, rois)| {
                let mut g = params.zero_grads();
                let loss = image_loss(&params, &image_tensor(&images[*i]), rois, cfg.lambda, scale, Some(&mut g), None)?;
                Ok((loss, g))
            })
            .collect::<Result<Vec<_>, NetworkError>>()?;
        let mut loss = 0.0;
        let mut grads = params.zero_grads();
        for (l, g) in parts {
            loss += l;
            for (acc, part) in grads.iter_mut().zip(g) {
                for (a, p) in acc.iter_mut().zip(part) {
                    *a += p;
                }
            }
        }
        let lr = cfg.learning_rate * if cfg.lr_step > 0 { cfg.lr_gamma.powi((it / cfg.lr_step) as i32) } else { 1.0 };
        let (lr, mu, wd) = (lr as f32, cfg.momentum as f32, cfg.weight_decay as f32);
        for ((w, v), g) in params.tensors_mut().into_iter().zip(&mut velocity).zip(&grads) {
            for ((wi, vi), gi) in w.iter_mut().zip(v.iter_mut()).zip(g) {
                *vi = mu * *vi - lr * (gi + wd * *wi);
                *wi += *vi;
            }
        }
        if !loss.is_finite() {
            return Err(NetworkError::Diverged { iteration: it });
        }
        if it % 100 == 0 {
            log::info!("iteration {it}: loss {loss:.4}");
        }
        trace.push(LossRecord { iteration: it, loss });
    }
    Ok(TrainOutput { params, loss_trace: trace, skipped_batches: skipped })
}

/// Moving average over the last `window` losses.
pub fn smoothed_loss(trace: &[LossRecord], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(trace.len());
    let mut sum = 0.0;
    for (i, r) in trace.iter().enumerate() {
        sum += r.loss;
        if i >= window {
            sum -= trace[i - window].loss;
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

pub fn render_loss_trace(trace: &[LossRecord]) -> String {
    let mut s = String::from("iteration,loss\n");
    for r in trace {
        s.push_str(&format!("{},{}\n", r.iteration, r.loss));
    }
    s
}
