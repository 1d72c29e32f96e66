//! Inference over one image's regions in either pipeline mode.

use std::time::{Duration, Instant};

use super::forward::region_features;
use super::model::{softmax, NetworkParams};
use super::tensor::{Real, Tensor};
use super::NetworkError;
use crate::geometry::BoundingBox;

/// Wall time spent in each inference stage.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub backbone: Duration,
    pub pooling: Duration,
    /// Fully connected trunk.
    pub fc: Duration,
    pub heads: Duration,
}

impl StageTimings {
    pub fn total(&self) -> Duration {
        self.backbone + self.pooling + self.fc + self.heads
    }
}

/// Per-region class probabilities (C + 1 each) and de-normalized box
/// offsets (4 C each, in the units of the box encoding).
#[derive(Debug, Clone, PartialEq)]
pub struct RawDetections {
    pub class_probs: Vec<Vec<f64>>,
    pub offsets: Vec<Vec<f64>>,
    /// Backbone evaluations performed for this image.
    pub backbone_passes: usize,
    pub timings: StageTimings,
}

pub fn detect_image<T: Real>(
    params: &NetworkParams<T>,
    image: &Tensor<T>,
    proposals: &[BoundingBox],
) -> Result<RawDetections, NetworkError> {
    let feats = region_features(params, image, proposals, false)?;
    let rows = feats.rows;
    let mut timings = StageTimings { backbone: feats.backbone_time, pooling: feats.pool_time, ..Default::default() };
    if rows == 0 {
        return Ok(RawDetections { class_probs: Vec::new(), offsets: Vec::new(), backbone_passes: 0, timings });
    }
    let t0 = Instant::now();
    let acts = params.trunk_forward(feats.x, rows);
    timings.fc = t0.elapsed();
    let t1 = Instant::now();
    let (logits, offsets) = params.heads(acts.last().expect("trunk input"), rows);
    let (nl, no) = (params.num_classes + 1, 4 * params.num_classes);
    let class_probs = (0..rows).map(|r| softmax(&logits[r * nl..(r + 1) * nl])).collect();
    let offsets = (0..rows)
        .map(|r| {
            offsets[r * no..(r + 1) * no]
                .iter()
                .enumerate()
                .map(|(i, v)| v.f64() * params.target_std[i % 4] + params.target_mean[i % 4])
                .collect()
        })
        .collect();
    timings.heads = t1.elapsed();
    Ok(RawDetections { class_probs, offsets, backbone_passes: feats.backbone_passes, timings })
}
