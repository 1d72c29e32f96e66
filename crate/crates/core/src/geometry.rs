//! Boxes, label identifiers and the box-regression parameterization.
//!
//! Coordinates are half-open pixel coordinates: a box covers
//! `[x_min, x_max) x [y_min, y_max)`, so its width is `x_max - x_min`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest log-scale a decoded box may grow by (a factor of 10^6). Keeps
/// `exp` finite on untrained heads; anything this large is clipped anyway.
pub const MAX_LOG_SCALE: f64 = 13.815_510_557_964_274;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid box [{0}, {1}, {2}, {3}]: needs finite coordinates with positive area")]
    InvalidBox(f64, f64, f64, f64),
    #[error("box collapsed to zero area after clipping to the image")]
    DegenerateBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

impl ImageSize {
    pub fn new(width: u32, height: u32) -> Self {
        ImageSize { width, height }
    }

    pub fn area(&self) -> u64 {
        self.width as u64 * self.height as u64
    }
}

/// Axis-aligned rectangle with strictly positive area.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, GeometryError> {
        let finite = [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite());
        if !finite || x_max <= x_min || y_max <= y_min {
            return Err(GeometryError::InvalidBox(x_min, y_min, x_max, y_max));
        }
        Ok(BoundingBox { x_min, y_min, x_max, y_max })
    }

    pub fn from_array(v: [f64; 4]) -> Result<Self, GeometryError> {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            self.x_min + 0.5 * self.width(),
            self.y_min + 0.5 * self.height(),
        )
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        Self::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
    }

    /// True when the box lies inside an image of the given size.
    pub fn is_within(&self, size: ImageSize) -> bool {
        self.x_min >= 0.0
            && self.y_min >= 0.0
            && self.x_max <= size.width as f64
            && self.y_max <= size.height as f64
    }

    pub fn clip(&self, size: ImageSize) -> Result<Self, GeometryError> {
        let w = size.width as f64;
        let h = size.height as f64;
        let x0 = self.x_min.clamp(0.0, w);
        let y0 = self.y_min.clamp(0.0, h);
        let x1 = self.x_max.clamp(0.0, w);
        let y1 = self.y_max.clamp(0.0, h);
        Self::new(x0, y0, x1, y1).map_err(|_| GeometryError::DegenerateBox)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        BoundingBox {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }

    /// Integer coordinates rounded to the nearest pixel edge.
    pub fn rounded(&self) -> [i64; 4] {
        [
            self.x_min.round() as i64,
            self.y_min.round() as i64,
            self.x_max.round() as i64,
            self.y_max.round() as i64,
        ]
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Smallest box containing both.
    pub fn hull(&self, other: &BoundingBox) -> BoundingBox {
        BoundingBox {
            x_min: self.x_min.min(other.x_min),
            y_min: self.y_min.min(other.y_min),
            x_max: self.x_max.max(other.x_max),
            y_max: self.y_max.max(other.y_max),
        }
    }
}

impl Serialize for BoundingBox {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for BoundingBox {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = <[f64; 4]>::deserialize(d)?;
        BoundingBox::from_array(v).map_err(serde::de::Error::custom)
    }
}

/// Intersection over union of two boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Logo class index; 0 is background, 1..=C are logo classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LogoClassId(pub u32);

impl LogoClassId {
    pub const BACKGROUND: LogoClassId = LogoClassId(0);

    pub fn is_background(self) -> bool {
        self.0 == 0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BrandId(pub u32);

impl BrandId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BrandMapError {
    #[error("class table is empty")]
    NoClasses,
    #[error("class {0} maps to brand index {1}, but only {2} brands exist")]
    BrandOutOfRange(String, usize, usize),
    #[error("brand {0:?} owns no logo class")]
    UnusedBrand(String),
    #[error("duplicate {kind} name {name:?}")]
    DuplicateName { kind: &'static str, name: String },
    #[error("name {0:?} is empty or contains a tab or newline")]
    BadName(String),
}

/// Total, surjective mapping from logo classes onto brands.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BrandMap {
    class_names: Vec<String>,
    brand_names: Vec<String>,
    class_brand: Vec<BrandId>,
}

fn check_name(name: &str) -> Result<(), BrandMapError> {
    if name.is_empty() || name.contains(['\t', '\n', '\r']) {
        return Err(BrandMapError::BadName(name.to_string()));
    }
    Ok(())
}

impl BrandMap {
    /// `class_brand[i]` is the brand of class `i + 1`.
    pub fn new(
        class_names: Vec<String>,
        brand_names: Vec<String>,
        class_brand: Vec<BrandId>,
    ) -> Result<Self, BrandMapError> {
        if class_names.is_empty() {
            return Err(BrandMapError::NoClasses);
        }
        assert_eq!(class_names.len(), class_brand.len(), "one brand per class");
        for (kind, names) in [("class", &class_names), ("brand", &brand_names)] {
            let mut seen = std::collections::HashSet::new();
            for n in names {
                check_name(n)?;
                if !seen.insert(n.as_str()) {
                    return Err(BrandMapError::DuplicateName { kind, name: n.clone() });
                }
            }
        }
        let mut used = vec![false; brand_names.len()];
        for (name, b) in class_names.iter().zip(&class_brand) {
            if b.index() >= brand_names.len() {
                return Err(BrandMapError::BrandOutOfRange(
                    name.clone(),
                    b.index(),
                    brand_names.len(),
                ));
            }
            used[b.index()] = true;
        }
        if let Some(i) = used.iter().position(|u| !u) {
            return Err(BrandMapError::UnusedBrand(brand_names[i].clone()));
        }
        Ok(BrandMap { class_names, brand_names, class_brand })
    }

    /// Builds the map from `(class name, brand name)` rows; brands are
    /// numbered in order of first appearance.
    pub fn from_pairs<S: AsRef<str>>(pairs: &[(S, S)]) -> Result<Self, BrandMapError> {
        let mut brand_names: Vec<String> = Vec::new();
        let mut class_names = Vec::with_capacity(pairs.len());
        let mut class_brand = Vec::with_capacity(pairs.len());
        for (c, b) in pairs {
            let b = b.as_ref();
            let idx = match brand_names.iter().position(|n| n == b) {
                Some(i) => i,
                None => {
                    brand_names.push(b.to_string());
                    brand_names.len() - 1
                }
            };
            class_names.push(c.as_ref().to_string());
            class_brand.push(BrandId(idx as u32));
        }
        Self::new(class_names, brand_names, class_brand)
    }

    /// Number of logo classes C (background excluded).
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn num_brands(&self) -> usize {
        self.brand_names.len()
    }

    pub fn brand_of(&self, cls: LogoClassId) -> Option<BrandId> {
        if cls.is_background() {
            return None;
        }
        self.class_brand.get(cls.index() - 1).copied()
    }

    pub fn class_name(&self, cls: LogoClassId) -> Option<&str> {
        if cls.is_background() {
            return None;
        }
        self.class_names.get(cls.index() - 1).map(String::as_str)
    }

    pub fn brand_name(&self, brand: BrandId) -> Option<&str> {
        self.brand_names.get(brand.index()).map(String::as_str)
    }

    pub fn class_by_name(&self, name: &str) -> Option<LogoClassId> {
        self.class_names
            .iter()
            .position(|n| n == name)
            .map(|i| LogoClassId(i as u32 + 1))
    }

    pub fn brand_by_name(&self, name: &str) -> Option<BrandId> {
        self.brand_names
            .iter()
            .position(|n| n == name)
            .map(|i| BrandId(i as u32))
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn brand_names(&self) -> &[String] {
        &self.brand_names
    }

    pub fn classes(&self) -> impl Iterator<Item = LogoClassId> {
        (1..=self.class_names.len() as u32).map(LogoClassId)
    }
}

/// Center offsets normalized by proposal size and log size ratios.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RegressionTarget {
    pub tx: f64,
    pub ty: f64,
    pub tw: f64,
    pub th: f64,
}

impl RegressionTarget {
    pub fn new(tx: f64, ty: f64, tw: f64, th: f64) -> Self {
        RegressionTarget { tx, ty, tw, th }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.tx, self.ty, self.tw, self.th]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        RegressionTarget { tx: v[0], ty: v[1], tw: v[2], th: v[3] }
    }
}

pub fn bbox_encode(proposal: &BoundingBox, gt: &BoundingBox) -> RegressionTarget {
    let (pcx, pcy) = proposal.center();
    let (gcx, gcy) = gt.center();
    let (pw, ph) = (proposal.width(), proposal.height());
    RegressionTarget {
        tx: (gcx - pcx) / pw,
        ty: (gcy - pcy) / ph,
        tw: (gt.width() / pw).ln(),
        th: (gt.height() / ph).ln(),
    }
}

/// Inverse of [`bbox_encode`], clipped to the image.
pub fn bbox_decode(
    proposal: &BoundingBox,
    t: &RegressionTarget,
    image: ImageSize,
) -> Result<BoundingBox, GeometryError> {
    if ![t.tx, t.ty, t.tw, t.th].iter().all(|v| v.is_finite()) {
        return Err(GeometryError::DegenerateBox);
    }
    let (pcx, pcy) = proposal.center();
    let (pw, ph) = (proposal.width(), proposal.height());
    let cx = pcx + t.tx * pw;
    let cy = pcy + t.ty * ph;
    let w = pw * t.tw.min(MAX_LOG_SCALE).exp();
    let h = ph * t.th.min(MAX_LOG_SCALE).exp();
    let raw = BoundingBox {
        x_min: cx - 0.5 * w,
        y_min: cy - 0.5 * h,
        x_max: cx + 0.5 * w,
        y_max: cy + 0.5 * h,
    };
    raw.clip(image)
}

/// A scored, class-labelled box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub cls: LogoClassId,
    pub score: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&b(0., 0., 10., 10.), &b(0., 0., 10., 10.)), 1.0);
        assert_eq!(iou(&b(0., 0., 10., 10.), &b(20., 20., 30., 30.)), 0.0);
        let v = iou(&b(0., 0., 10., 10.), &b(5., 0., 15., 10.));
        assert!((v - 50.0 / 150.0).abs() < 1e-12);
    }

    #[test]
    fn touching_boxes_do_not_overlap() {
        assert_eq!(iou(&b(0., 0., 10., 10.), &b(10., 0., 20., 10.)), 0.0);
    }

    #[test]
    fn rejects_empty_boxes() {
        assert!(BoundingBox::new(5., 0., 5., 10.).is_err());
        assert!(BoundingBox::new(0., 0., f64::NAN, 10.).is_err());
    }

    #[test]
    fn encode_examples() {
        let p = b(0., 0., 10., 10.);
        assert_eq!(bbox_encode(&p, &p), RegressionTarget::default());
        let t = bbox_encode(&p, &b(5., 5., 15., 15.));
        assert_eq!(t, RegressionTarget::new(0.5, 0.5, 0.0, 0.0));
    }

    #[test]
    fn decode_examples() {
        let img = ImageSize::new(100, 100);
        let p = b(0., 0., 10., 10.);
        assert_eq!(bbox_decode(&p, &RegressionTarget::default(), img).unwrap(), p);
        let t = RegressionTarget::new(0.5, 0.5, 0.0, 0.0);
        assert_eq!(bbox_decode(&p, &t, img).unwrap(), b(5., 5., 15., 15.));

        let border = b(90., 90., 100., 100.);
        assert_eq!(bbox_decode(&border, &t, img).unwrap(), b(95., 95., 100., 100.));
        // A full-width shift moves the box entirely outside the image.
        let off = RegressionTarget::new(1.0, 1.0, 0.0, 0.0);
        assert_eq!(bbox_decode(&border, &off, img), Err(GeometryError::DegenerateBox));
    }

    #[test]
    fn decode_caps_scale() {
        let p = b(10., 10., 20., 20.);
        let t = RegressionTarget::new(0.0, 0.0, 50.0, 50.0);
        let out = bbox_decode(&p, &t, ImageSize::new(10_000, 10_000)).unwrap();
        assert!(out.width() <= 10.0 * MAX_LOG_SCALE.exp() + 1e-9);
    }

    #[test]
    fn brand_map_validation() {
        let m = BrandMap::from_pairs(&[("nike-1", "nike"), ("nike-2", "nike"), ("chanel-1", "chanel")])
            .unwrap();
        assert_eq!(m.num_classes(), 3);
        assert_eq!(m.num_brands(), 2);
        assert_eq!(m.brand_of(LogoClassId(2)), Some(BrandId(0)));
        assert_eq!(m.brand_of(LogoClassId(3)), Some(BrandId(1)));
        assert_eq!(m.brand_of(LogoClassId::BACKGROUND), None);
        assert_eq!(m.class_by_name("chanel-1"), Some(LogoClassId(3)));

        let unused = BrandMap::new(
            vec!["a".into()],
            vec!["x".into(), "y".into()],
            vec![BrandId(0)],
        );
        assert!(matches!(unused, Err(BrandMapError::UnusedBrand(_))));
        assert!(BrandMap::from_pairs(&[("a\tb", "x")]).is_err());
        assert!(BrandMap::from_pairs(&[("a", "x"), ("a", "y")]).is_err());
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (0.0..200.0f64, 0.0..200.0f64, 0.5..100.0f64, 0.5..100.0f64)
            .prop_map(|(x, y, w, h)| b(x, y, x + w, y + h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), c in arb_box()) {
            let v = iou(&a, &c);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v, iou(&c, &a));
            prop_assert_eq!(iou(&a, &a), 1.0);
            if a != c {
                prop_assert!(v < 1.0);
            }
        }

        #[test]
        fn decode_inverts_encode(p in arb_box(), g in arb_box()) {
            let img = ImageSize::new(300, 300);
            let t = bbox_encode(&p, &g);
            let back = bbox_decode(&p, &t, img).unwrap();
            for (x, y) in back.to_array().iter().zip(g.to_array()) {
                prop_assert!((x - y).abs() <= 1e-9 * y.abs().max(1.0));
            }
        }

        #[test]
        fn encode_translation_equivariant(p in arb_box(), g in arb_box(),
                                          dx in -50.0..50.0f64, dy in -50.0..50.0f64) {
            let t0 = bbox_encode(&p, &g).to_array();
            let t1 = bbox_encode(&p.translate(dx, dy), &g.translate(dx, dy)).to_array();
            for (x, y) in t0.iter().zip(t1) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
