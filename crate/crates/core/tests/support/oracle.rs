//! Brute-force reference implementations of the detection and brand metrics.
//! Shared by the property tests and the acceptance suite.

#![allow(dead_code)]

use logodet::dataset::{AnnotatedObject, Annotation, Dataset};
use logodet::postprocess::ImageDetections;
use logodet::{BoundingBox, BrandMap, Detection, LogoClassId};
use rand::Rng;

/// Intersection over union from raw corner coordinates.
pub fn iou_ref(a: [f64; 4], b: [f64; 4]) -> f64 {
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = w * h;
    let area = |r: [f64; 4]| (r[2] - r[0]) * (r[3] - r[1]);
    let union = area(a) + area(b) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Indices sorted by score descending, ties by position.
fn score_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    order
}

/// Greedy matching by exhaustive search: every injective assignment of
/// detections to GTs above the threshold is enumerated, and the one whose
/// per-detection keys `(matched, iou, -gt)` are lexicographically largest in
/// score order wins. That maximum is exactly what the greedy rule picks.
pub fn match_ref(dets: &[([f64; 4], f64)], gts: &[[f64; 4]], thr: f64) -> Vec<bool> {
    let order = score_order(&dets.iter().map(|d| d.1).collect::<Vec<_>>());
    let mut best: Option<(Vec<(u8, f64, i64)>, Vec<Option<usize>>)> = None;
    let mut assign = vec![None; dets.len()];
    fn rec(
        k: usize,
        order: &[usize],
        dets: &[([f64; 4], f64)],
        gts: &[[f64; 4]],
        thr: f64,
        assign: &mut Vec<Option<usize>>,
        best: &mut Option<(Vec<(u8, f64, i64)>, Vec<Option<usize>>)>,
    ) {
        if k == order.len() {
            let key: Vec<(u8, f64, i64)> = order
                .iter()
                .map(|&i| match assign[i] {
                    Some(g) => (1, iou_ref(dets[i].0, gts[g]), -(g as i64)),
                    None => (0, 0.0, 0),
                })
                .collect();
            let better = match best {
                None => true,
                Some((b, _)) => key.partial_cmp(b) == Some(std::cmp::Ordering::Greater),
            };
            if better {
                *best = Some((key, assign.clone()));
            }
            return;
        }
        let i = order[k];
        rec(k + 1, order, dets, gts, thr, assign, best);
        for g in 0..gts.len() {
            if assign.contains(&Some(g)) || iou_ref(dets[i].0, gts[g]) < thr {
                continue;
            }
            assign[i] = Some(g);
            rec(k + 1, order, dets, gts, thr, assign, best);
            assign[i] = None;
        }
    }
    rec(0, &order, dets, gts, thr, &mut assign, &mut best);
    best.map(|(_, a)| a.iter().map(Option::is_some).collect()).unwrap_or_default()
}

/// All-points AP from the explicit precision/recall curve: at each rank where
/// recall rises, the step is weighted by the best precision at that recall or
/// beyond.
pub fn ap_ref(scored: &[(f64, bool)], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let order = score_order(&scored.iter().map(|s| s.0).collect::<Vec<_>>());
    let flags: Vec<bool> = order.iter().map(|&i| scored[i].1).collect();
    let curve: Vec<(f64, f64)> = (1..=flags.len())
        .map(|n| {
            let tp = flags[..n].iter().filter(|f| **f).count() as f64;
            (tp / n_gt as f64, tp / n as f64)
        })
        .collect();
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (n, &(r, _)) in curve.iter().enumerate() {
        let p = curve[n..].iter().map(|c| c.1).fold(0.0, f64::max);
        ap += (r - prev) * p;
        prev = r;
    }
    Some(ap)
}

/// Detection mAP over a dataset: pooled per class in image order, each image
/// matched independently.
pub fn map_ref(ds: &Dataset, dets: &[ImageDetections], thr: f64) -> Option<f64> {
    let mut aps = Vec::new();
    for c in 1..=ds.brand_map.num_classes() as u32 {
        let cls = LogoClassId(c);
        let mut scored = Vec::new();
        let mut n_gt = 0;
        for ann in &ds.annotations {
            let gts: Vec<[f64; 4]> = ann.objects.iter().filter(|o| o.cls == cls).map(|o| o.bbox.to_array()).collect();
            n_gt += gts.len();
            let d: Vec<([f64; 4], f64)> = dets
                .iter()
                .filter(|x| x.image == ann.image)
                .flat_map(|x| x.detections.iter())
                .filter(|x| x.cls == cls)
                .map(|x| (x.bbox.to_array(), x.score))
                .collect();
            let flags = match_ref(&d, &gts, thr);
            scored.extend(d.iter().map(|x| x.1).zip(flags));
        }
        if let Some(ap) = ap_ref(&scored, n_gt) {
            aps.push(ap);
        }
    }
    (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
}

/// One-vs-rest AUC by counting (positive, negative) pairs; ties count half.
pub fn auc_pairs(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let (mut wins, mut pairs) = (0.0, 0usize);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if positive[i] && !positive[j] {
                pairs += 1;
                wins += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
            }
        }
    }
    (pairs > 0).then(|| wins / pairs as f64)
}

/// Macro AUC over brands with at least one positive and one negative.
pub fn macro_auc_ref(scores: &[Vec<f64>], labels: &[usize], brands: usize) -> Option<f64> {
    let per: Vec<f64> = (0..brands)
        .filter_map(|b| {
            let col: Vec<f64> = scores.iter().map(|s| s[b]).collect();
            let pos: Vec<bool> = labels.iter().map(|&l| l == b).collect();
            auc_pairs(&col, &pos)
        })
        .collect();
    (!per.is_empty()).then(|| per.iter().sum::<f64>() / per.len() as f64)
}

/// A randomized tiny evaluation instance on a coarse grid, so overlaps and
/// score ties are common.
pub struct TinyInstance {
    pub ds: Dataset,
    pub dets: Vec<ImageDetections>,
}

fn grid_box(rng: &mut impl Rng) -> BoundingBox {
    let x0 = rng.random_range(0..8) as f64;
    let y0 = rng.random_range(0..8) as f64;
    let x1 = rng.random_range(x0 as u32 + 1..=10) as f64;
    let y1 = rng.random_range(y0 as u32 + 1..=10) as f64;
    BoundingBox::new(x0, y0, x1, y1).unwrap()
}

/// At most 5 detections, 3 GT objects and 3 classes, over one or two images.
pub fn tiny_instance(rng: &mut impl Rng) -> TinyInstance {
    let classes = rng.random_range(1..=3usize);
    let pairs: Vec<(String, String)> = (0..classes).map(|c| (format!("c{c}"), format!("b{c}"))).collect();
    let map = BrandMap::from_pairs(&pairs).unwrap();
    let images = rng.random_range(1..=2usize);
    let mut anns: Vec<Annotation> = (0..images)
        .map(|i| Annotation { image: format!("i{i}.png"), width: 10, height: 10, objects: vec![] })
        .collect();
    let mut dets: Vec<ImageDetections> =
        anns.iter().map(|a| ImageDetections { image: a.image.clone(), detections: vec![] }).collect();
    for _ in 0..rng.random_range(0..=3) {
        let i = rng.random_range(0..images);
        let cls = LogoClassId(rng.random_range(1..=classes as u32));
        anns[i].objects.push(AnnotatedObject { bbox: grid_box(rng), cls });
    }
    for _ in 0..rng.random_range(0..=5) {
        let i = rng.random_range(0..images);
        let cls = LogoClassId(rng.random_range(1..=classes as u32));
        // Snap near a GT half the time so true positives are frequent.
        let bbox = match anns[i].objects.iter().find(|o| o.cls == cls) {
            Some(o) if rng.random_bool(0.5) => {
                let [x0, y0, x1, y1] = o.bbox.to_array();
                let mut j = |v: f64, lo: f64, hi: f64| (v + rng.random_range(-1..=1) as f64).clamp(lo, hi);
                let (a, b) = (j(x0, 0.0, 9.0), j(y0, 0.0, 9.0));
                let (c, d) = (j(x1, a + 1.0, 10.0), j(y1, b + 1.0, 10.0));
                BoundingBox::new(a, b, c, d).unwrap()
            }
            _ => grid_box(rng),
        };
        let score = rng.random_range(1..=5) as f64 / 5.0;
        dets[i].detections.push(Detection { bbox, cls, score });
    }
    TinyInstance { ds: Dataset::new(anns, map).unwrap(), dets }
}
