//! From raw head outputs to final detections: decode, threshold, NMS.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{bbox_decode, iou, BoundingBox, Detection, ImageSize, LogoClassId, RegressionTarget};

#[derive(Debug, Error, PartialEq)]
pub enum PostprocessError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{rois} proposals but {outputs} head outputs")]
    Misaligned { rois: usize, outputs: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PostprocessParams {
    pub score_threshold: f64,
    pub nms_iou: f64,
    /// Detections kept per image after NMS, highest scores first.
    pub max_per_image: usize,
}

impl Default for PostprocessParams {
    fn default() -> Self {
        PostprocessParams { score_threshold: 0.05, nms_iou: 0.3, max_per_image: 100 }
    }
}

/// One detection per (region, logo class) whose probability reaches the
/// threshold; boxes are decoded, clipped, and dropped when degenerate.
pub fn decode_detections(
    proposals: &[BoundingBox],
    class_probs: &[Vec<f64>],
    offsets: &[Vec<f64>],
    score_threshold: f64,
    image: ImageSize,
) -> Result<Vec<Detection>, PostprocessError> {
    if class_probs.len() != proposals.len() || offsets.len() != proposals.len() {
        return Err(PostprocessError::Misaligned { rois: proposals.len(), outputs: class_probs.len().min(offsets.len()) });
    }
    let mut out = Vec::new();
    for ((roi, probs), off) in proposals.iter().zip(class_probs).zip(offsets) {
        for (c, &p) in probs.iter().enumerate().skip(1) {
            if !(p >= score_threshold) {
                continue;
            }
            let Some(o) = off.get(4 * (c - 1)..4 * c) else { continue };
            let t = RegressionTarget::new(o[0], o[1], o[2], o[3]);
            if let Ok(bbox) = bbox_decode(roi, &t, image) {
                out.push(Detection { bbox, cls: LogoClassId(c as u32), score: p });
            }
        }
    }
    Ok(out)
}

/// Score descending, then coordinates and class ascending.
pub fn detection_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| {
            a.bbox
                .to_array()
                .iter()
                .zip(b.bbox.to_array())
                .map(|(x, y)| x.total_cmp(&y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
        .then(a.cls.cmp(&b.cls))
}

/// Greedy per-class suppression: a box is dropped when it overlaps a kept
/// box of its class with IoU >= `iou_threshold`. Output follows
/// [`detection_order`].
pub fn nms(detections: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut sorted = detections.to_vec();
    sorted.sort_by(detection_order);
    let mut kept: Vec<Detection> = Vec::new();
    for d in sorted {
        if !kept.iter().any(|k| k.cls == d.cls && iou(&k.bbox, &d.bbox) >= iou_threshold) {
            kept.push(d);
        }
    }
    kept
}

/// Decode, suppress and cap one image's outputs.
pub fn postprocess_image(
    proposals: &[BoundingBox],
    class_probs: &[Vec<f64>],
    offsets: &[Vec<f64>],
    image: ImageSize,
    params: &PostprocessParams,
) -> Result<Vec<Detection>, PostprocessError> {
    let raw = decode_detections(proposals, class_probs, offsets, params.score_threshold, image)?;
    let mut kept = nms(&raw, params.nms_iou);
    kept.truncate(params.max_per_image);
    Ok(kept)
}

/// Detections of one image, one JSON object per line in detection files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageDetections {
    pub image: String,
    pub detections: Vec<Detection>,
}

pub fn render_detections(sets: &[ImageDetections]) -> String {
    let mut s = String::new();
    for set in sets {
        s.push_str(&serde_json::to_string(set).expect("detections serialize"));
        s.push('\n');
    }
    s
}

pub fn parse_detections(text: &str) -> Result<Vec<ImageDetections>, PostprocessError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| PostprocessError::Parse { line: i + 1, message };
        let set: ImageDetections = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        for d in &set.detections {
            if !(0.0..=1.0).contains(&d.score) {
                return Err(err(format!("score {} outside [0, 1]", d.score)));
            }
            if d.cls.is_background() {
                return Err(err("background detections are not allowed".into()));
            }
        }
        out.push(set);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    fn det(bbox: BoundingBox, cls: u32, score: f64) -> Detection {
        Detection { bbox, cls: LogoClassId(cls), score }
    }

    #[test]
    fn decode_rules() {
        let size = ImageSize::new(100, 100);
        let roi = [b(10.0, 10.0, 30.0, 30.0)];
        let none = decode_detections(&roi, &[vec![1.0, 0.0, 0.0]], &[vec![0.0; 8]], 0.05, size).unwrap();
        assert!(none.is_empty());
        let one = decode_detections(&roi, &[vec![0.05, 0.05, 0.9]], &[vec![0.0; 8]], 0.05, size).unwrap();
        assert_eq!(one.len(), 2);
        assert_eq!(one[1], det(roi[0], 2, 0.9));
        let above = decode_detections(&roi, &[vec![0.1, 0.0, 0.9]], &[vec![0.0, 0.0, 0.0, 0.0, 0.0, -5.0, 0.0, 0.0]], 0.5, size)
            .unwrap();
        // Moved five widths up: outside the image, dropped.
        assert!(above.is_empty());
    }

    #[test]
    fn nms_rules() {
        let a = det(b(0.0, 0.0, 10.0, 10.0), 1, 0.9);
        let c = det(b(0.0, 0.0, 10.0, 7.0), 1, 0.8);
        assert!((iou(&a.bbox, &c.bbox) - 0.7).abs() < 1e-12);
        assert_eq!(nms(&[c, a], 0.3), vec![a]);
        let far = det(b(50.0, 50.0, 60.0, 60.0), 1, 0.8);
        assert_eq!(nms(&[far, a], 0.3), vec![a, far]);
        let other = det(c.bbox, 2, 0.8);
        assert_eq!(nms(&[other, a], 0.3), vec![a, other]);
    }

    #[test]
    fn jsonl_round_trip() {
        let sets = vec![
            ImageDetections { image: "a.png".into(), detections: vec![det(b(1.0, 2.0, 3.5, 4.0), 3, 0.25)] },
            ImageDetections { image: "b.png".into(), detections: vec![] },
        ];
        assert_eq!(parse_detections(&render_detections(&sets)).unwrap(), sets);
        let bad = r#"{"image":"a","detections":[{"bbox":[0,0,1,1],"cls":1,"score":1.5}]}"#;
        assert!(matches!(parse_detections(bad), Err(PostprocessError::Parse { line: 1, .. })));
        assert!(parse_detections(r#"{"image":"a","detections":[{"bbox":[2,0,1,1],"cls":1,"score":0.5}]}"#).is_err());
    }
}
