//! Dense versus SVD-compressed detector on the same regions.

use std::time::Duration;

use serde::Serialize;

use super::bench::StageStats;
use crate::config::EvalConfig;
use crate::network::{detect_image, image_tensor, NetworkParams};
use crate::pipeline::{evaluate_run, EvalSummary, PipelineError, SplitData};
use crate::postprocess::{postprocess_image, ImageDetections, PostprocessParams};
use crate::svd::LayerReport;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompressionComparison {
    pub layers: Vec<LayerReport>,
    pub rois: usize,
    /// Share of regions whose classifier argmax is unchanged.
    pub argmax_agreement: f64,
    pub dense: EvalSummary,
    pub compressed: EvalSummary,
    /// Per-image fully connected trunk time.
    pub fc_dense: StageStats,
    pub fc_compressed: StageStats,
    /// `1 - compressed / dense` of total trunk time.
    pub fc_latency_reduction: f64,
    /// Compressed over dense per-image network plus post-processing time.
    pub image_time_ratio: f64,
    /// `1 - compressed / dense` of trunk multiply-adds.
    pub flop_reduction: f64,
}

fn argmax(p: &[f64]) -> usize {
    p.iter().enumerate().fold(0, |b, (i, v)| if *v > p[b] { i } else { b })
}

/// Runs both detectors on every image (first `roi_count` proposals),
/// interleaving them per image so timing drift affects both alike.
pub fn compare_compressed(
    dense: &NetworkParams<f32>,
    compressed: &NetworkParams<f32>,
    layers: &[LayerReport],
    test: SplitData<'_>,
    roi_count: usize,
    post: &PostprocessParams,
    eval: &EvalConfig,
) -> Result<CompressionComparison, PipelineError> {
    let mut dets = [Vec::new(), Vec::new()];
    let mut fc: [Vec<Duration>; 2] = [Vec::new(), Vec::new()];
    let mut whole = [Duration::ZERO; 2];
    let (mut rois, mut agree) = (0usize, 0usize);
    for ((ann, img), props) in test.ds.annotations.iter().zip(test.images).zip(test.proposals) {
        let x = image_tensor(img);
        let r = &props[..roi_count.min(props.len())];
        let a = detect_image(dense, &x, r)?;
        let b = detect_image(compressed, &x, r)?;
        rois += r.len();
        agree += a.class_probs.iter().zip(&b.class_probs).filter(|(p, q)| argmax(p) == argmax(q)).count();
        for (k, raw) in [a, b].into_iter().enumerate() {
            fc[k].push(raw.timings.fc);
            let t = std::time::Instant::now();
            let d = postprocess_image(r, &raw.class_probs, &raw.offsets, ann.size(), post)?;
            whole[k] += raw.timings.total() + t.elapsed();
            dets[k].push(ImageDetections { image: ann.image.clone(), detections: d });
        }
    }
    let secs = |v: &[Duration]| v.iter().map(Duration::as_secs_f64).sum::<f64>();
    let dense_flops: u64 = layers.iter().map(|l| l.dense_flops).sum();
    let comp_flops: u64 = layers.iter().map(|l| l.compressed_flops).sum();
    Ok(CompressionComparison {
        layers: layers.to_vec(),
        rois,
        argmax_agreement: if rois == 0 { 1.0 } else { agree as f64 / rois as f64 },
        dense: evaluate_run(test.ds, &dets[0], eval)?,
        compressed: evaluate_run(test.ds, &dets[1], eval)?,
        fc_dense: StageStats::from_durations(&fc[0]),
        fc_compressed: StageStats::from_durations(&fc[1]),
        fc_latency_reduction: if secs(&fc[0]) > 0.0 { 1.0 - secs(&fc[1]) / secs(&fc[0]) } else { 0.0 },
        image_time_ratio: if whole[0] > Duration::ZERO { whole[1].as_secs_f64() / whole[0].as_secs_f64() } else { 1.0 },
        flop_reduction: if dense_flops > 0 { 1.0 - comp_flops as f64 / dense_flops as f64 } else { 0.0 },
    })
}

impl CompressionComparison {
    /// Compressed minus dense: (mAP, micro accuracy, macro AUC). Undefined
    /// metrics give NaN.
    pub fn deltas(&self) -> (f64, f64, f64) {
        let map = |s: &EvalSummary| s.detection.map.unwrap_or(f64::NAN);
        let auc = |s: &EvalSummary| s.auc.as_ref().map_or(f64::NAN, |a| a.macro_auc);
        (
            map(&self.compressed) - map(&self.dense),
            self.compressed.accuracy.micro - self.dense.accuracy.micro,
            auc(&self.compressed) - auc(&self.dense),
        )
    }
}
