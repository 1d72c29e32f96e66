//! Training configuration and proposal labelling.

use serde::{Deserialize, Serialize};

use super::model::ArchSpec;
use super::NetworkError;
use crate::dataset::AnnotatedObject;
use crate::geometry::{bbox_encode, iou, BoundingBox, LogoClassId, RegressionTarget};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub arch: ArchSpec,
    pub iterations: usize,
    pub learning_rate: f64,
    /// Learning rate is multiplied by `lr_gamma` every `lr_step` iterations; 0 disables.
    pub lr_step: usize,
    pub lr_gamma: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub images_per_batch: usize,
    pub rois_per_image: usize,
    pub fg_fraction: f64,
    pub fg_iou: f64,
    /// Background interval `[lo, hi)` of max IoU.
    pub bg_iou: [f64; 2],
    pub lambda: f64,
    /// Proposals per image considered for labelling.
    pub max_proposals: usize,
    /// Add ground-truth boxes to the candidate regions.
    pub include_gt: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: ArchSpec::default(),
            iterations: 2000,
            learning_rate: 0.01,
            lr_step: 1500,
            lr_gamma: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            images_per_batch: 2,
            rois_per_image: 32,
            fg_fraction: 0.25,
            fg_iou: 0.5,
            bg_iou: [0.1, 0.5],
            lambda: 1.0,
            max_proposals: 2000,
            include_gt: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NetworkError> {
        let bad = |m: &str| Err(NetworkError::InvalidConfig(m.to_string()));
        self.arch.validate()?;
        if !(self.fg_fraction > 0.0 && self.fg_fraction < 1.0) {
            return bad("fg_fraction must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.fg_iou) {
            return bad("fg_iou must lie in [0, 1]");
        }
        let [lo, hi] = self.bg_iou;
        if !(0.0 <= lo && lo < hi && hi <= self.fg_iou) {
            return bad("bg interval must satisfy 0 <= lo < hi <= fg_iou");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.lambda >= 0.0 && self.lr_gamma > 0.0) {
            return bad("weight_decay and lambda must be non-negative, lr_gamma positive");
        }
        if self.images_per_batch == 0 || self.rois_per_image == 0 || self.max_proposals == 0 {
            return bad("batch sizes must be positive");
        }
        Ok(())
    }
}

/// A proposal with its assigned label; `target` is the raw box encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRoi {
    pub bbox: BoundingBox,
    pub label: LogoClassId,
    pub target: Option<RegressionTarget>,
    pub max_iou: f64,
}

/// Labels proposals against ground truth; proposals outside both the
/// foreground and background ranges are dropped.
pub fn assign_roi_labels(proposals: &[BoundingBox], gt: &[AnnotatedObject], cfg: &TrainConfig) -> Vec<LabeledRoi> {
    let [lo, hi] = cfg.bg_iou;
    proposals
        .iter()
        .filter_map(|p| {
            let best = gt
                .iter()
                .map(|g| (iou(p, &g.bbox), g))
                .fold(None::<(f64, &AnnotatedObject)>, |acc, cur| match acc {
                    Some(a) if a.0 >= cur.0 => Some(a),
                    _ => Some(cur),
                });
            let max_iou = best.map_or(0.0, |b| b.0);
            if let Some((v, g)) = best.filter(|b| b.0 >= cfg.fg_iou) {
                Some(LabeledRoi { bbox: *p, label: g.cls, target: Some(bbox_encode(p, &g.bbox)), max_iou: v })
            } else if max_iou >= lo && max_iou < hi {
                Some(LabeledRoi { bbox: *p, label: LogoClassId::BACKGROUND, target: None, max_iou })
            } else {
                None
            }
        })
        .collect()
}
