//! Brand recognition by aggregating logo detections.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BrandId, BrandMap, Detection};
use crate::report::to_csv;

#[derive(Debug, Error, PartialEq)]
pub enum BrandError {
    #[error("detection class {0} is not in the class table")]
    UnknownClass(u32),
}

/// How detection scores of one brand's logo classes combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Highest detection score.
    #[default]
    Max,
    /// Sum of detection scores, clamped to 1.
    Sum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrandPrediction {
    /// One score in `[0, 1]` per brand, indexed by `BrandId`.
    pub scores: Vec<f64>,
    pub decision: Option<BrandId>,
    pub decision_score: f64,
}

pub fn brand_scores(detections: &[Detection], map: &BrandMap, agg: Aggregation) -> Result<Vec<f64>, BrandError> {
    let mut scores = vec![0.0f64; map.num_brands()];
    for d in detections {
        let b = map.brand_of(d.cls).filter(|_| !d.cls.is_background()).ok_or(BrandError::UnknownClass(d.cls.0))?;
        let s = &mut scores[b.index()];
        *s = match agg {
            Aggregation::Max => s.max(d.score),
            Aggregation::Sum => (*s + d.score).min(1.0),
        };
    }
    Ok(scores)
}

/// Argmax brand when its score reaches `min_score`; ties go to the lowest id.
pub fn predict_brand(scores: &[f64], min_score: f64) -> BrandPrediction {
    let best = scores.iter().enumerate().fold(None::<(usize, f64)>, |acc, (i, &s)| match acc {
        Some((_, bs)) if bs >= s => acc,
        _ => Some((i, s)),
    });
    let (decision, decision_score) = match best {
        Some((i, s)) if s >= min_score => (Some(BrandId(i as u32)), s),
        Some((_, s)) => (None, s),
        None => (None, 0.0),
    };
    BrandPrediction { scores: scores.to_vec(), decision, decision_score }
}

/// Convenience: scores then decision for one image.
pub fn recognize_brand(
    detections: &[Detection],
    map: &BrandMap,
    agg: Aggregation,
    min_score: f64,
) -> Result<BrandPrediction, BrandError> {
    Ok(predict_brand(&brand_scores(detections, map, agg)?, min_score))
}

/// CSV with columns `image, brand, score` followed by one score column per brand.
/// An empty `brand` field means no decision.
pub fn render_brand_csv(rows: &[(String, BrandPrediction)], map: &BrandMap) -> String {
    let mut header = vec!["image".to_string(), "brand".to_string(), "score".to_string()];
    header.extend(map.brand_names().iter().cloned());
    let body = rows.iter().map(|(image, p)| {
        let mut r = vec![
            image.clone(),
            p.decision.and_then(|b| map.brand_name(b)).unwrap_or("").to_string(),
            p.decision_score.to_string(),
        ];
        r.extend(p.scores.iter().map(|s| s.to_string()));
        r
    });
    to_csv(&header, body)
}
