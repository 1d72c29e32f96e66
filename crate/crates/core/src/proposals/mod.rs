//! Class-agnostic region proposals by selective search.

mod search;
pub mod segment;
pub mod similarity;

pub use search::{group_regions, selective_search, Hierarchy, Merge};
pub use segment::{segment, SegmentationMap};
pub use similarity::{region_similarity, RegionFeatures, Similarity, SimilarityTerms};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou, BoundingBox};

#[derive(Debug, Error, PartialEq)]
pub enum ProposalError {
    #[error("recall is undefined without ground-truth objects")]
    EmptyGroundTruth,
    #[error("invalid proposal parameters: {0}")]
    InvalidParams(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionProposal {
    pub bbox: BoundingBox,
    /// 0 is the first proposal of the ranked list.
    pub rank: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorSpace {
    Rgb,
    Hsv,
    Intensity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProposalParams {
    /// Segmentation scale; larger values give larger initial regions.
    pub k: f64,
    pub min_size: usize,
    /// Gaussian pre-smoothing before segmentation; 0 disables it.
    pub sigma: f64,
    /// One grouping strategy per colour space; more than one runs the union.
    pub color_spaces: Vec<ColorSpace>,
    pub top_k: usize,
    pub seed: u64,
}

impl Default for ProposalParams {
    fn default() -> Self {
        ProposalParams {
            k: 150.0,
            min_size: 20,
            sigma: 0.8,
            color_spaces: vec![ColorSpace::Rgb],
            top_k: 2000,
            seed: 0,
        }
    }
}

impl ProposalParams {
    pub fn validate(&self) -> Result<(), ProposalError> {
        let bad = |m: &str| Err(ProposalError::InvalidParams(m.to_string()));
        if !(self.k.is_finite() && self.k > 0.0) {
            return bad("k must be positive");
        }
        if self.min_size < 1 {
            return bad("min_size must be at least 1");
        }
        if self.top_k < 1 {
            return bad("top_k must be at least 1");
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return bad("sigma must be non-negative");
        }
        if self.color_spaces.is_empty() {
            return bad("at least one colour space is required");
        }
        Ok(())
    }
}

/// `(hits, total)`: ground-truth boxes covered by some proposal at `iou_threshold`.
pub fn recall_counts(proposals: &[BoundingBox], gts: &[BoundingBox], iou_threshold: f64) -> (usize, usize) {
    let hits = gts
        .iter()
        .filter(|g| proposals.iter().any(|p| iou(p, g) >= iou_threshold))
        .count();
    (hits, gts.len())
}

/// Fraction of ground-truth boxes matched by at least one proposal.
pub fn proposal_recall(proposals: &[BoundingBox], gts: &[BoundingBox], iou_threshold: f64) -> Result<f64, ProposalError> {
    if gts.is_empty() {
        return Err(ProposalError::EmptyGroundTruth);
    }
    let (hits, total) = recall_counts(proposals, gts, iou_threshold);
    Ok(hits as f64 / total as f64)
}

/// Precomputed proposals for one image, in rank order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalSet {
    pub image: String,
    pub boxes: Vec<BoundingBox>,
}

impl ProposalSet {
    pub fn from_ranked(image: &str, proposals: &[RegionProposal]) -> Self {
        ProposalSet { image: image.to_string(), boxes: proposals.iter().map(|p| p.bbox).collect() }
    }

    pub fn truncated(&self, k: usize) -> &[BoundingBox] {
        &self.boxes[..k.min(self.boxes.len())]
    }
}

pub fn parse_proposals(text: &str) -> Result<Vec<ProposalSet>, ProposalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let set: ProposalSet =
            serde_json::from_str(line).map_err(|e| ProposalError::Parse { line: i + 1, message: e.to_string() })?;
        out.push(set);
    }
    Ok(out)
}

pub fn render_proposals(sets: &[ProposalSet]) -> String {
    let mut out = String::new();
    for s in sets {
        out.push_str(&serde_json::to_string(s).expect("plain record serializes"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgb, RgbImage};

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn uniform_image_gives_full_box() {
        let img = RgbImage::from_pixel(20, 12, Rgb([128, 128, 128]));
        let p = selective_search(&img, &ProposalParams::default());
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].bbox, b(0.0, 0.0, 20.0, 12.0));
        assert_eq!(p[0].rank, 0);
    }

    #[test]
    fn top_k_one() {
        let img = RgbImage::from_fn(32, 32, |x, y| Rgb([(x * 8) as u8, (y * 8) as u8, ((x ^ y) * 8) as u8]));
        let params = ProposalParams { top_k: 1, min_size: 2, ..ProposalParams::default() };
        assert_eq!(selective_search(&img, &params).len(), 1);
    }

    #[test]
    fn recall_examples() {
        let gts = [b(0., 0., 10., 10.), b(20., 20., 40., 40.)];
        assert_eq!(proposal_recall(&gts, &gts, 0.5).unwrap(), 1.0);
        assert_eq!(proposal_recall(&[], &gts, 0.5).unwrap(), 0.0);
        assert_eq!(proposal_recall(&gts, &[], 0.5), Err(ProposalError::EmptyGroundTruth));
    }

    #[test]
    fn proposal_lines_round_trip() {
        let sets = vec![
            ProposalSet { image: "a.png".into(), boxes: vec![b(0., 0., 3., 4.), b(1., 1., 2., 2.)] },
            ProposalSet { image: "b.png".into(), boxes: vec![] },
        ];
        assert_eq!(parse_proposals(&render_proposals(&sets)).unwrap(), sets);
        assert!(matches!(parse_proposals("{\"image\":1}"), Err(ProposalError::Parse { line: 1, .. })));
    }

    #[test]
    fn params_validation() {
        assert!(ProposalParams::default().validate().is_ok());
        assert!(ProposalParams { k: 0.0, ..Default::default() }.validate().is_err());
        assert!(ProposalParams { top_k: 0, ..Default::default() }.validate().is_err());
    }
}
