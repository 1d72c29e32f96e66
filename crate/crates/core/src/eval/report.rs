//! Table-shaped CSV reports and overlay images.

use image::{Rgb, RgbImage};

use super::{AucReport, BrandAccuracy, DetectionEval};
use crate::dataset::Annotation;
use crate::geometry::{BoundingBox, BrandId, BrandMap, Detection};
use crate::report::to_csv;

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

/// One row per logo class, then a `mAP` row. Classes without ground truth
/// have an empty `ap` field.
pub fn render_class_ap_csv(eval: &DetectionEval, map: &BrandMap) -> String {
    let mut rows: Vec<Vec<String>> = eval
        .per_class
        .iter()
        .map(|c| {
            let brand = map.brand_of(c.cls).and_then(|b| map.brand_name(b)).unwrap_or("");
            vec![c.name.clone(), brand.to_string(), c.n_gt.to_string(), c.n_det.to_string(), opt(c.ap)]
        })
        .collect();
    rows.push(vec!["mAP".into(), String::new(), String::new(), String::new(), opt(eval.map)]);
    let mut h = header(&["class", "brand", "n_gt", "n_det", "ap"]);
    h[4] = format!("ap@{}", eval.iou_threshold);
    to_csv(&h, rows)
}

/// One row per brand with its accuracy and one-vs-rest AUC, then the micro
/// and macro summaries.
pub fn render_brand_accuracy_csv(acc: &BrandAccuracy, auc: Option<&AucReport>, map: &BrandMap) -> String {
    let mut rows = Vec::new();
    for (i, &(correct, total)) in acc.per_brand.iter().enumerate() {
        let a = (total > 0).then(|| correct as f64 / total as f64);
        rows.push(vec![
            map.brand_name(BrandId(i as u32)).unwrap_or("").to_string(),
            correct.to_string(),
            total.to_string(),
            opt(a),
            opt(auc.and_then(|r| r.per_brand.get(i).copied().flatten())),
        ]);
    }
    let correct: usize = acc.per_brand.iter().map(|p| p.0).sum();
    let total: usize = acc.per_brand.iter().map(|p| p.1).sum();
    rows.push(vec!["micro".into(), correct.to_string(), total.to_string(), acc.micro.to_string(), String::new()]);
    rows.push(vec![
        "macro".into(),
        String::new(),
        String::new(),
        acc.macro_mean.to_string(),
        opt(auc.map(|r| r.macro_auc)),
    ]);
    to_csv(&header(&["brand", "correct", "total", "accuracy", "auc"]), rows)
}

const GT_COLOR: Rgb<u8> = Rgb([40, 220, 60]);
const DET_COLOR: Rgb<u8> = Rgb([235, 40, 40]);

fn draw_rect(img: &mut RgbImage, b: &BoundingBox, color: Rgb<u8>, thickness: i64) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    // Pixel-edge coordinates: the last covered pixel is one before the max edge.
    let [x0, y0, x1, y1] = b.rounded();
    let (x1, y1) = (x1 - 1, y1 - 1);
    let mut put = |x: i64, y: i64| {
        if (0..w).contains(&x) && (0..h).contains(&y) {
            img.put_pixel(x as u32, y as u32, color);
        }
    };
    for t in 0..thickness {
        for x in x0..=x1 {
            put(x, y0 + t);
            put(x, y1 - t);
        }
        for y in y0..=y1 {
            put(x0 + t, y);
            put(x1 - t, y);
        }
    }
}

/// Copy of `image` with ground-truth boxes in green and detections scoring
/// at least `min_score` in red; stronger detections get thicker outlines.
pub fn draw_overlay(image: &RgbImage, truth: &Annotation, detections: &[Detection], min_score: f64) -> RgbImage {
    let mut out = image.clone();
    for o in &truth.objects {
        draw_rect(&mut out, &o.bbox, GT_COLOR, 2);
    }
    for d in detections.iter().filter(|d| d.score >= min_score) {
        draw_rect(&mut out, &d.bbox, DET_COLOR, if d.score >= 0.5 { 2 } else { 1 });
    }
    out
}
