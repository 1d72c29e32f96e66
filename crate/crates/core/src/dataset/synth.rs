//! Synthetic logo scenes: transformed logo templates pasted onto backgrounds.
//!
//! Each pasted logo goes through scale, rotation, shear, brightness and
//! per-channel colour changes, and optionally a partial occlusion. The
//! emitted box is the tight axis-aligned box of the transformed template
//! rectangle, before occlusion.

use std::path::Path;

use image::{Rgb, RgbImage, Rgba, RgbaImage};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{save_dataset, AnnotatedObject, Annotation, Dataset, DatasetError};
use crate::geometry::{BoundingBox, BrandId, BrandMap, LogoClassId};
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisParams {
    /// Template scale factor range.
    pub scale: [f64; 2],
    pub rotation_deg: [f64; 2],
    /// Horizontal shear coefficient range.
    pub shear: [f64; 2],
    /// Multiplicative brightness range.
    pub brightness: [f64; 2],
    /// Independent multiplicative range per colour channel.
    pub color_jitter: [f64; 2],
    /// Fraction of the logo footprint overpainted by a background patch.
    pub occlusion: [f64; 2],
    pub objects_per_image: [u32; 2],
    /// Draw all logos of an image from one brand.
    pub single_brand: bool,
    /// Amplitude of uniform pixel noise added to the finished image.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthesisParams {
    fn default() -> Self {
        SynthesisParams {
            scale: [0.7, 1.25],
            rotation_deg: [-15.0, 15.0],
            shear: [-0.15, 0.15],
            brightness: [0.7, 1.2],
            color_jitter: [0.85, 1.15],
            occlusion: [0.0, 0.25],
            objects_per_image: [1, 2],
            single_brand: true,
            noise: 8.0,
            seed: 0,
        }
    }
}

impl SynthesisParams {
    /// Plain placement: no transform, jitter or occlusion.
    pub fn identity(seed: u64) -> Self {
        SynthesisParams {
            scale: [1.0, 1.0],
            rotation_deg: [0.0, 0.0],
            shear: [0.0, 0.0],
            brightness: [1.0, 1.0],
            color_jitter: [1.0, 1.0],
            occlusion: [0.0, 0.0],
            objects_per_image: [1, 1],
            single_brand: false,
            noise: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let check = |name: &str, r: [f64; 2], lo: f64, hi: f64| {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1] && r[0] >= lo && r[1] <= hi) {
                Err(DatasetError::InvalidParams(format!("{name} range {r:?} must be ordered within [{lo}, {hi}]")))
            } else {
                Ok(())
            }
        };
        check("scale", self.scale, 1e-3, 100.0)?;
        check("rotation_deg", self.rotation_deg, -180.0, 180.0)?;
        check("shear", self.shear, -1.0, 1.0)?;
        check("brightness", self.brightness, 0.0, 10.0)?;
        check("color_jitter", self.color_jitter, 0.0, 10.0)?;
        check("occlusion", self.occlusion, 0.0, 0.999_999)?;
        if self.objects_per_image[0] < 1 || self.objects_per_image[0] > self.objects_per_image[1] {
            return Err(DatasetError::InvalidParams(format!(
                "objects_per_image {:?} must be an ordered range starting at 1 or more",
                self.objects_per_image
            )));
        }
        if !(self.noise.is_finite() && (0.0..=255.0).contains(&self.noise)) {
            return Err(DatasetError::InvalidParams(format!("noise {} outside [0, 255]", self.noise)));
        }
        Ok(())
    }
}

/// Everything needed to re-derive where a logo went.
#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    pub cls: LogoClassId,
    pub template: usize,
    pub transform: LogoTransform,
    pub bbox: BoundingBox,
    pub occluded_fraction: f64,
}

/// Template-centred linear map followed by a translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogoTransform {
    /// Row-major 2x2 matrix applied to template coordinates relative to the template centre.
    pub matrix: [f64; 4],
    pub template_size: (u32, u32),
    /// Destination position of the template centre.
    pub center: (f64, f64),
}

impl LogoTransform {
    fn new(scale: f64, rotation_deg: f64, shear: f64, template_size: (u32, u32)) -> Self {
        let (s, c) = rotation_deg.to_radians().sin_cos();
        // R * Shear * Scale
        let m = [c * scale, (c * shear - s) * scale, s * scale, (s * shear + c) * scale];
        LogoTransform { matrix: m, template_size, center: (0.0, 0.0) }
    }

    pub fn forward(&self, u: f64, v: f64) -> (f64, f64) {
        let (cx, cy) = (self.template_size.0 as f64 / 2.0, self.template_size.1 as f64 / 2.0);
        let (a, b) = (u - cx, v - cy);
        let m = &self.matrix;
        (m[0] * a + m[1] * b + self.center.0, m[2] * a + m[3] * b + self.center.1)
    }

    pub fn inverse(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.matrix;
        let det = m[0] * m[3] - m[1] * m[2];
        let (a, b) = (x - self.center.0, y - self.center.1);
        let u = (m[3] * a - m[1] * b) / det;
        let v = (-m[2] * a + m[0] * b) / det;
        (u + self.template_size.0 as f64 / 2.0, v + self.template_size.1 as f64 / 2.0)
    }

    /// Extent of the transformed template rectangle around its centre.
    fn half_extent(&self) -> (f64, f64) {
        let (w, h) = (self.template_size.0 as f64, self.template_size.1 as f64);
        let m = &self.matrix;
        (
            0.5 * (m[0].abs() * w + m[1].abs() * h),
            0.5 * (m[2].abs() * w + m[3].abs() * h),
        )
    }
}

pub struct SynthOutput {
    pub dataset: Dataset,
    pub images: Vec<RgbImage>,
    pub placements: Vec<Vec<Placement>>,
}

impl SynthOutput {
    /// Writes PNGs plus `classes.tsv` / `annotations.jsonl` under `root`.
    pub fn write(&self, root: &Path) -> Result<(), DatasetError> {
        for (ann, img) in self.dataset.annotations.iter().zip(&self.images) {
            let path = root.join(&ann.image);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)
                    .map_err(|source| DatasetError::Io { path: parent.to_path_buf(), source })?;
            }
            img.save(&path).map_err(|source| DatasetError::Image { path, source })?;
        }
        save_dataset(&self.dataset, root)
    }
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        r[0] + (r[1] - r[0]) * rng.random::<f64>()
    }
}

/// Generates `n_images` scenes. `templates[c - 1]` holds the template
/// variants of logo class `c`.
pub fn synthesize_dataset(
    templates: &[Vec<RgbaImage>],
    backgrounds: &[RgbImage],
    brand_map: &BrandMap,
    params: &SynthesisParams,
    n_images: usize,
) -> Result<SynthOutput, DatasetError> {
    params.validate()?;
    if n_images == 0 {
        return Err(DatasetError::InvalidParams("n_images must be at least 1".into()));
    }
    if backgrounds.is_empty() {
        return Err(DatasetError::InvalidParams("no background images".into()));
    }
    if templates.len() != brand_map.num_classes() {
        return Err(DatasetError::InvalidParams(format!(
            "{} template sets for {} classes",
            templates.len(),
            brand_map.num_classes()
        )));
    }
    let (min_bw, min_bh) = backgrounds
        .iter()
        .fold((u32::MAX, u32::MAX), |(w, h), b| (w.min(b.width()), h.min(b.height())));
    for (i, set) in templates.iter().enumerate() {
        let class = brand_map.class_name(LogoClassId(i as u32 + 1)).unwrap_or("?").to_string();
        if set.is_empty() {
            return Err(DatasetError::InvalidParams(format!("class {class} has no template")));
        }
        for t in set {
            let w = (t.width() as f64 * params.scale[0]).ceil() as u32;
            let h = (t.height() as f64 * params.scale[0]).ceil() as u32;
            if w > min_bw || h > min_bh {
                return Err(DatasetError::TemplateTooLarge {
                    class,
                    width: w,
                    height: h,
                    bg_width: min_bw,
                    bg_height: min_bh,
                });
            }
        }
    }

    let scenes: Vec<(Annotation, RgbImage, Vec<Placement>)> = (0..n_images)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(params.seed, i as u64);
            compose_scene(i, &mut rng, templates, backgrounds, brand_map, params)
        })
        .collect();

    let mut annotations = Vec::with_capacity(n_images);
    let mut images = Vec::with_capacity(n_images);
    let mut placements = Vec::with_capacity(n_images);
    for (a, img, p) in scenes {
        annotations.push(a);
        images.push(img);
        placements.push(p);
    }
    let dataset = Dataset::new(annotations, brand_map.clone())?;
    Ok(SynthOutput { dataset, images, placements })
}

fn pick_class(rng: &mut ChaCha8Rng, map: &BrandMap, brand: Option<BrandId>) -> LogoClassId {
    match brand {
        Some(b) => {
            let owned: Vec<LogoClassId> = map.classes().filter(|c| map.brand_of(*c) == Some(b)).collect();
            owned[rng.random_range(0..owned.len())]
        }
        None => LogoClassId(rng.random_range(1..=map.num_classes() as u32)),
    }
}

fn compose_scene(
    index: usize,
    rng: &mut ChaCha8Rng,
    templates: &[Vec<RgbaImage>],
    backgrounds: &[RgbImage],
    map: &BrandMap,
    params: &SynthesisParams,
) -> (Annotation, RgbImage, Vec<Placement>) {
    let background = &backgrounds[rng.random_range(0..backgrounds.len())];
    let mut canvas = background.clone();
    let (bw, bh) = canvas.dimensions();
    let n_obj = rng.random_range(params.objects_per_image[0]..=params.objects_per_image[1]);
    let brand = params
        .single_brand
        .then(|| BrandId(rng.random_range(0..map.num_brands() as u32)));

    let mut placements: Vec<Placement> = Vec::new();
    for _ in 0..n_obj {
        let cls = pick_class(rng, map, brand);
        let set = &templates[cls.index() - 1];
        let ti = rng.random_range(0..set.len());
        let tpl = &set[ti];
        let scale = uniform(rng, params.scale);
        let rot = uniform(rng, params.rotation_deg);
        let shear = uniform(rng, params.shear);
        let brightness = uniform(rng, params.brightness);
        let jitter = [
            uniform(rng, params.color_jitter),
            uniform(rng, params.color_jitter),
            uniform(rng, params.color_jitter),
        ];
        let occlusion = uniform(rng, params.occlusion);
        let mut tf = LogoTransform::new(scale, rot, shear, tpl.dimensions());
        let (hx, hy) = tf.half_extent();
        let fw = (2.0 * hx).round().max(1.0) as u32;
        let fh = (2.0 * hy).round().max(1.0) as u32;
        if fw > bw || fh > bh {
            continue;
        }

        let mut spot = None;
        for _ in 0..30 {
            let x = rng.random_range(0..=bw - fw) as f64;
            let y = rng.random_range(0..=bh - fh) as f64;
            let cand = BoundingBox::new(x, y, x + fw as f64, y + fh as f64).expect("positive footprint");
            if placements.iter().all(|p| p.bbox.intersection_area(&cand) == 0.0) {
                spot = Some(cand);
                break;
            }
        }
        let Some(bbox) = spot else { continue };
        tf.center = (bbox.x_min + hx, bbox.y_min + hy);

        paste(&mut canvas, tpl, &tf, &bbox, brightness, jitter);
        if occlusion > 0.0 {
            occlude(&mut canvas, background, &bbox, occlusion, rng);
        }
        placements.push(Placement { cls, template: ti, transform: tf, bbox, occluded_fraction: occlusion });
    }

    if params.noise > 0.0 {
        for px in canvas.pixels_mut() {
            for c in px.0.iter_mut() {
                let n = (rng.random::<f64>() * 2.0 - 1.0) * params.noise;
                *c = (*c as f64 + n).round().clamp(0.0, 255.0) as u8;
            }
        }
    }

    let annotation = Annotation {
        image: format!("images/{index:06}.png"),
        width: bw,
        height: bh,
        objects: placements.iter().map(|p| AnnotatedObject { bbox: p.bbox, cls: p.cls }).collect(),
    };
    (annotation, canvas, placements)
}

fn sample_bilinear(t: &RgbaImage, u: f64, v: f64) -> [f64; 4] {
    let (w, h) = (t.width() as i64, t.height() as i64);
    let x = (u - 0.5).clamp(0.0, (w - 1) as f64);
    let y = (v - 0.5).clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as i64, y.floor() as i64);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let px = |xx: i64, yy: i64| t.get_pixel(xx as u32, yy as u32).0;
    let (a, b, c, d) = (px(x0, y0), px(x1, y0), px(x0, y1), px(x1, y1));
    let mut out = [0.0; 4];
    for k in 0..4 {
        let top = a[k] as f64 * (1.0 - fx) + b[k] as f64 * fx;
        let bot = c[k] as f64 * (1.0 - fx) + d[k] as f64 * fx;
        out[k] = top * (1.0 - fy) + bot * fy;
    }
    out
}

fn paste(canvas: &mut RgbImage, tpl: &RgbaImage, tf: &LogoTransform, bbox: &BoundingBox, gain: f64, jitter: [f64; 3]) {
    let (tw, th) = (tpl.width() as f64, tpl.height() as f64);
    let x0 = (bbox.x_min.floor() as i64 - 1).max(0);
    let y0 = (bbox.y_min.floor() as i64 - 1).max(0);
    let x1 = (bbox.x_max.ceil() as i64 + 1).min(canvas.width() as i64);
    let y1 = (bbox.y_max.ceil() as i64 + 1).min(canvas.height() as i64);
    for y in y0..y1 {
        for x in x0..x1 {
            let (u, v) = tf.inverse(x as f64 + 0.5, y as f64 + 0.5);
            if !(0.0..tw).contains(&u) || !(0.0..th).contains(&v) {
                continue;
            }
            let s = sample_bilinear(tpl, u, v);
            let alpha = s[3] / 255.0;
            if alpha <= 0.0 {
                continue;
            }
            let dst = canvas.get_pixel_mut(x as u32, y as u32);
            for k in 0..3 {
                let fg = (s[k] * gain * jitter[k]).clamp(0.0, 255.0);
                let bg = dst.0[k] as f64;
                dst.0[k] = (alpha * fg + (1.0 - alpha) * bg).round() as u8;
            }
        }
    }
}

/// Covers `fraction` of the footprint box with a band cut from another spot of the background.
fn occlude(canvas: &mut RgbImage, background: &RgbImage, bbox: &BoundingBox, fraction: f64, rng: &mut ChaCha8Rng) {
    let [x0, y0, x1, y1] = bbox.rounded();
    let (w, h) = (x1 - x0, y1 - y0);
    let side = rng.random_range(0..4);
    let (ox, oy, ow, oh) = match side {
        0 => (x0, y0, ((w as f64 * fraction).round() as i64).max(1), h),
        1 => (x1 - ((w as f64 * fraction).round() as i64).max(1), y0, ((w as f64 * fraction).round() as i64).max(1), h),
        2 => (x0, y0, w, ((h as f64 * fraction).round() as i64).max(1)),
        _ => (x0, y1 - ((h as f64 * fraction).round() as i64).max(1), w, ((h as f64 * fraction).round() as i64).max(1)),
    };
    let (bw, bh) = (background.width() as i64, background.height() as i64);
    let sx = rng.random_range(0..=(bw - ow).max(0));
    let sy = rng.random_range(0..=(bh - oh).max(0));
    for dy in 0..oh {
        for dx in 0..ow {
            let (tx, ty) = (ox + dx, oy + dy);
            let (fx, fy) = ((sx + dx).min(bw - 1), (sy + dy).min(bh - 1));
            if tx >= 0 && ty >= 0 && tx < canvas.width() as i64 && ty < canvas.height() as i64 {
                let p = *background.get_pixel(fx as u32, fy as u32);
                canvas.put_pixel(tx as u32, ty as u32, p);
            }
        }
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = (h.rem_euclid(360.0)) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [((r + m) * 255.0).round() as u8, ((g + m) * 255.0).round() as u8, ((b + m) * 255.0).round() as u8]
}

const GLYPHS: usize = 10;

/// True where glyph `g` inks the unit square point `(x, y)`, both in `[0, 1)`.
fn glyph_ink(g: usize, x: f64, y: f64) -> bool {
    let (cx, cy) = (x - 0.5, y - 0.5);
    let r = (cx * cx + cy * cy).sqrt();
    match g % GLYPHS {
        0 => (0.22..0.34).contains(&r),
        1 => (cx.abs() < 0.09 && cy.abs() < 0.34) || (cy.abs() < 0.09 && cx.abs() < 0.34),
        2 => y > 0.2 && y < 0.8 && (cx.abs() < (y - 0.2) * 0.6),
        3 => cx.abs() < 0.34 && cy.abs() < 0.34 && ((y * 10.0) as i64 % 3 == 0),
        4 => ((x - y).abs() < 0.13) && r < 0.42,
        5 => [(-0.18, -0.18), (0.18, -0.18), (-0.18, 0.18), (0.18, 0.18)]
            .iter()
            .any(|(dx, dy)| ((cx - dx).powi(2) + (cy - dy).powi(2)).sqrt() < 0.11),
        6 => cx.abs() < 0.34 && ((cy + 0.1 - cx.abs() * 0.8).abs() < 0.08),
        7 => cx.abs() < 0.32 && cy.abs() < 0.32 && (cx.abs() > 0.2 || cy.abs() > 0.2),
        8 => cy.abs() < 0.32 && cx.abs() < 0.34 && ((x * 9.0) as i64 % 2 == 0),
        _ => cx.abs() + cy.abs() < 0.32,
    }
}

/// A class table with `logos_per_brand` logo designs for each of `num_brands`
/// brands, plus one RGBA template per class. Logos of a brand share its
/// colour scheme and differ in glyph and plate shape.
pub fn procedural_templates(num_brands: usize, logos_per_brand: usize) -> (BrandMap, Vec<Vec<RgbaImage>>) {
    let mut pairs = Vec::new();
    let mut templates = Vec::new();
    for b in 0..num_brands {
        let hue = 360.0 * b as f64 / num_brands as f64;
        let plate = hsv_to_rgb(hue, 0.85, 0.9);
        let ink = if b % 2 == 0 { [250, 250, 245] } else { [20, 20, 30] };
        for j in 0..logos_per_brand {
            let idx = b * logos_per_brand + j;
            pairs.push((format!("brand{b}-logo{j}"), format!("brand{b}")));
            let elliptic = j % 2 == 1;
            let (w, h) = if elliptic { (88u32, 88u32) } else { (104, 72) };
            let img = RgbaImage::from_fn(w, h, |x, y| {
                let u = (x as f64 + 0.5) / w as f64;
                let v = (y as f64 + 0.5) / h as f64;
                if elliptic && (u - 0.5).powi(2) + (v - 0.5).powi(2) > 0.25 {
                    return Rgba([0, 0, 0, 0]);
                }
                let c = if glyph_ink(idx, u, v) { ink } else { plate };
                Rgba([c[0], c[1], c[2], 255])
            });
            templates.push(vec![img]);
        }
    }
    let map = BrandMap::from_pairs(&pairs).expect("generated names are unique");
    (map, templates)
}

/// Muted product-photo style backgrounds: a colour gradient with a few soft shapes.
pub fn procedural_backgrounds(count: usize, width: u32, height: u32, seed: u64) -> Vec<RgbImage> {
    (0..count)
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let top = hsv_to_rgb(rng.random_range(0.0..360.0), rng.random_range(0.05..0.35), rng.random_range(0.45..0.95));
            let bottom = hsv_to_rgb(rng.random_range(0.0..360.0), rng.random_range(0.05..0.35), rng.random_range(0.45..0.95));
            let mut img = RgbImage::from_fn(width, height, |_, y| {
                let t = y as f64 / height.max(1) as f64;
                let mut c = [0u8; 3];
                for k in 0..3 {
                    c[k] = (top[k] as f64 * (1.0 - t) + bottom[k] as f64 * t).round() as u8;
                }
                Rgb(c)
            });
            for _ in 0..rng.random_range(2..6) {
                let col = hsv_to_rgb(rng.random_range(0.0..360.0), rng.random_range(0.05..0.3), rng.random_range(0.4..0.95));
                let cx = rng.random_range(0.0..width as f64);
                let cy = rng.random_range(0.0..height as f64);
                let rx = rng.random_range(10.0..width as f64 / 2.0);
                let ry = rng.random_range(10.0..height as f64 / 2.0);
                let ellipse = rng.random::<bool>();
                for (x, y, px) in img.enumerate_pixels_mut() {
                    let dx = (x as f64 + 0.5 - cx) / rx;
                    let dy = (y as f64 + 0.5 - cy) / ry;
                    let inside = if ellipse { dx * dx + dy * dy < 1.0 } else { dx.abs() < 1.0 && dy.abs() < 1.0 };
                    if inside {
                        for k in 0..3 {
                            px.0[k] = ((px.0[k] as f64 + col[k] as f64) / 2.0).round() as u8;
                        }
                    }
                }
            }
            img
        })
        .collect()
}
