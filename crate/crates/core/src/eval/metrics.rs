//! Detection matching, average precision, brand accuracy and AUC.

use std::collections::{HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::dataset::Dataset;
use crate::geometry::{iou, BoundingBox, BrandId, Detection, LogoClassId};
use crate::postprocess::ImageDetections;

/// Precision-recall interpolation used for AP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApMode {
    /// Area under the monotone precision envelope at every recall step.
    #[default]
    AllPoints,
    /// Mean of the envelope sampled at recall 0, 0.1, ..., 1.
    Voc11,
}

/// TP/FP flag per detection, in input order. Detections are visited by
/// descending score (ties keep input order); each takes the unmatched
/// ground-truth box of highest IoU at or above `iou_threshold`.
pub fn match_detections(dets: &[(BoundingBox, f64)], gts: &[BoundingBox], iou_threshold: f64) -> Vec<bool> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].1.total_cmp(&dets[a].1).then(a.cmp(&b)));
    let mut taken = vec![false; gts.len()];
    let mut flags = vec![false; dets.len()];
    for i in order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] {
                continue;
            }
            let v = iou(&dets[i].0, gt);
            if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            flags[i] = true;
        }
    }
    flags
}

/// AP of scored TP/FP flags against `n_gt` ground-truth objects. Flags are
/// ranked by descending score; ties keep input order.
pub fn average_precision(scored: &[(f64, bool)], n_gt: usize, mode: ApMode) -> Result<f64, EvalError> {
    if n_gt == 0 {
        return Err(EvalError::NoGroundTruth);
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[b].0.total_cmp(&scored[a].0).then(a.cmp(&b)));
    let mut recall = Vec::with_capacity(order.len());
    let mut precision = Vec::with_capacity(order.len());
    let mut tp = 0usize;
    for (rank, &i) in order.iter().enumerate() {
        tp += scored[i].1 as usize;
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (rank + 1) as f64);
    }
    // Monotone envelope: best precision at any recall at or beyond this rank.
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    Ok(match mode {
        ApMode::AllPoints => {
            let mut ap = 0.0;
            let mut prev = 0.0;
            for (r, p) in recall.iter().zip(&precision) {
                ap += (r - prev) * p;
                prev = *r;
            }
            ap
        }
        ApMode::Voc11 => {
            (0..=10)
                .map(|k| {
                    let t = k as f64 / 10.0;
                    recall.iter().position(|r| *r >= t - 1e-12).map_or(0.0, |i| precision[i])
                })
                .sum::<f64>()
                / 11.0
        }
    })
}

/// Unweighted mean of the defined APs; `None` when no class has ground truth.
pub fn mean_ap(aps: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = aps.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassAp {
    pub cls: LogoClassId,
    pub name: String,
    /// `None` when the class has no ground truth in the evaluated set.
    pub ap: Option<f64>,
    pub n_gt: usize,
    pub n_det: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionEval {
    pub iou_threshold: f64,
    pub per_class: Vec<ClassAp>,
    pub map: Option<f64>,
}

/// Index of detections by image name; unknown images are an error.
pub fn detections_by_image<'a>(
    ds: &Dataset,
    dets: &'a [ImageDetections],
) -> Result<HashMap<&'a str, &'a [Detection]>, EvalError> {
    let names: HashSet<&str> = ds.annotations.iter().map(|a| a.image.as_str()).collect();
    let mut out = HashMap::new();
    for d in dets {
        if !names.contains(d.image.as_str()) {
            return Err(EvalError::UnknownImage(d.image.clone()));
        }
        if out.insert(d.image.as_str(), &d.detections[..]).is_some() {
            return Err(EvalError::DuplicateImage(d.image.clone()));
        }
    }
    Ok(out)
}

/// Per-class AP and mAP of `dets` against the dataset's ground truth.
/// Images without a detection record count as having no detections.
pub fn evaluate_detections(
    ds: &Dataset,
    dets: &[ImageDetections],
    iou_threshold: f64,
    mode: ApMode,
) -> Result<DetectionEval, EvalError> {
    let index = detections_by_image(ds, dets)?;
    let nc = ds.brand_map.num_classes();
    // Per image, per class: (score, flag) list and GT count.
    let per_image: Vec<Vec<(Vec<(f64, bool)>, usize)>> = ds
        .annotations
        .par_iter()
        .map(|ann| {
            let d = index.get(ann.image.as_str()).copied().unwrap_or(&[]);
            (1..=nc as u32)
                .map(|c| {
                    let cls = LogoClassId(c);
                    let gts: Vec<BoundingBox> = ann.objects.iter().filter(|o| o.cls == cls).map(|o| o.bbox).collect();
                    let cd: Vec<(BoundingBox, f64)> =
                        d.iter().filter(|x| x.cls == cls).map(|x| (x.bbox, x.score)).collect();
                    let flags = match_detections(&cd, &gts, iou_threshold);
                    (cd.iter().map(|x| x.1).zip(flags).collect(), gts.len())
                })
                .collect()
        })
        .collect();
    let mut per_class = Vec::with_capacity(nc);
    for (k, cls) in ds.brand_map.classes().enumerate() {
        let mut scored = Vec::new();
        let mut n_gt = 0;
        for img in &per_image {
            scored.extend_from_slice(&img[k].0);
            n_gt += img[k].1;
        }
        let ap = match average_precision(&scored, n_gt, mode) {
            Ok(v) => Some(v),
            Err(_) => {
                log::warn!("class {} has no ground truth; excluded from mAP", cls.0);
                None
            }
        };
        per_class.push(ClassAp {
            cls,
            name: ds.brand_map.class_name(cls).unwrap_or("").to_string(),
            ap,
            n_gt,
            n_det: scored.len(),
        });
    }
    let map = mean_ap(&per_class.iter().map(|c| c.ap).collect::<Vec<_>>());
    Ok(DetectionEval { iou_threshold, per_class, map })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BrandAccuracy {
    pub micro: f64,
    /// Mean of the per-brand accuracies over brands with labelled images.
    pub macro_mean: f64,
    /// `(correct, total)` per brand.
    pub per_brand: Vec<(usize, usize)>,
}

/// Accuracy of per-image brand decisions; `None` decisions count as wrong.
pub fn brand_accuracy(
    predictions: &[(String, Option<BrandId>)],
    labels: &[(String, BrandId)],
    num_brands: usize,
) -> Result<BrandAccuracy, EvalError> {
    let pred: HashMap<&str, Option<BrandId>> = predictions.iter().map(|(n, d)| (n.as_str(), *d)).collect();
    let label_names: HashSet<&str> = labels.iter().map(|(n, _)| n.as_str()).collect();
    if pred.len() != predictions.len() || label_names.len() != labels.len() || pred.len() != label_names.len() {
        return Err(EvalError::LabelMismatch);
    }
    if labels.is_empty() {
        return Err(EvalError::LabelMismatch);
    }
    let mut per_brand = vec![(0usize, 0usize); num_brands];
    let mut correct = 0;
    for (name, b) in labels {
        let d = *pred.get(name.as_str()).ok_or(EvalError::LabelMismatch)?;
        let slot = per_brand.get_mut(b.index()).ok_or(EvalError::LabelMismatch)?;
        slot.1 += 1;
        if d == Some(*b) {
            slot.0 += 1;
            correct += 1;
        }
    }
    let present: Vec<f64> = per_brand.iter().filter(|p| p.1 > 0).map(|p| p.0 as f64 / p.1 as f64).collect();
    Ok(BrandAccuracy {
        micro: correct as f64 / labels.len() as f64,
        macro_mean: present.iter().sum::<f64>() / present.len() as f64,
        per_brand,
    })
}

/// Mann-Whitney AUC with midranks for ties; `None` without both classes.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|p| **p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their mean.
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += mid * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AucReport {
    pub macro_auc: f64,
    /// `None` for brands without positive images.
    pub per_brand: Vec<Option<f64>>,
}

/// Macro one-vs-rest AUC of per-image brand scores.
pub fn brand_auc(scores: &[Vec<f64>], labels: &[BrandId], num_brands: usize) -> Result<AucReport, EvalError> {
    if scores.len() != labels.len() || scores.iter().any(|s| s.len() != num_brands) {
        return Err(EvalError::LabelMismatch);
    }
    let present: HashSet<BrandId> = labels.iter().copied().collect();
    if present.len() < 2 {
        return Err(EvalError::TooFewBrands);
    }
    let per_brand: Vec<Option<f64>> = (0..num_brands)
        .map(|b| {
            let pos: Vec<bool> = labels.iter().map(|l| l.index() == b).collect();
            let col: Vec<f64> = scores.iter().map(|s| s[b]).collect();
            let auc = binary_auc(&col, &pos);
            if auc.is_none() {
                log::warn!("brand {b} has no positive images; skipped in AUC");
            }
            auc
        })
        .collect();
    let defined: Vec<f64> = per_brand.iter().flatten().copied().collect();
    Ok(AucReport { macro_auc: defined.iter().sum::<f64>() / defined.len() as f64, per_brand })
}
