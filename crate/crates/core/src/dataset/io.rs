use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AnnotatedObject, Annotation, Dataset, DatasetError};
use crate::geometry::{BoundingBox, BrandMap};

pub const CLASSES_FILE: &str = "classes.tsv";
pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectRecord {
    bbox: BoundingBox,
    cls: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationRecord {
    image: String,
    width: u32,
    height: u32,
    objects: Vec<ObjectRecord>,
}

fn parse_err(file: &str, line: usize, message: impl Into<String>) -> DatasetError {
    DatasetError::Parse { file: file.to_string(), line, message: message.into() }
}

/// Parses `classes.tsv`: one `logo-class<TAB>brand` row per class, in class-id order.
pub fn parse_class_table(text: &str) -> Result<BrandMap, DatasetError> {
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (Some(class), Some(brand), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(parse_err(CLASSES_FILE, line_no, "expected exactly two tab-separated columns"));
        };
        if class.is_empty() || brand.is_empty() {
            return Err(parse_err(CLASSES_FILE, line_no, "empty class or brand name"));
        }
        pairs.push((class, brand));
    }
    BrandMap::from_pairs(&pairs).map_err(|e| parse_err(CLASSES_FILE, 0, e.to_string()))
}

pub fn render_class_table(map: &BrandMap) -> String {
    let mut out = String::new();
    for cls in map.classes() {
        let brand = map.brand_of(cls).expect("total map");
        out.push_str(map.class_name(cls).expect("class"));
        out.push('\t');
        out.push_str(map.brand_name(brand).expect("brand"));
        out.push('\n');
    }
    out
}

/// Parses `annotations.jsonl` against a class table. Blank lines are skipped.
pub fn parse_annotations(text: &str, map: &BrandMap) -> Result<Vec<Annotation>, DatasetError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: AnnotationRecord = serde_json::from_str(line)
            .map_err(|e| parse_err(ANNOTATIONS_FILE, line_no, e.to_string()))?;
        let mut objects = Vec::with_capacity(rec.objects.len());
        for o in rec.objects {
            let cls = map.class_by_name(&o.cls).ok_or_else(|| DatasetError::Validation {
                image: rec.image.clone(),
                message: format!("unknown class {:?} (line {line_no})", o.cls),
            })?;
            objects.push(AnnotatedObject { bbox: o.bbox, cls });
        }
        let ann = Annotation { image: rec.image, width: rec.width, height: rec.height, objects };
        ann.validate(map)?;
        if !seen.insert(ann.image.clone()) {
            return Err(parse_err(ANNOTATIONS_FILE, line_no, format!("duplicate image {:?}", ann.image)));
        }
        out.push(ann);
    }
    Ok(out)
}

pub fn render_annotations(annotations: &[Annotation], map: &BrandMap) -> String {
    let mut out = String::new();
    for a in annotations {
        let rec = AnnotationRecord {
            image: a.image.clone(),
            width: a.width,
            height: a.height,
            objects: a
                .objects
                .iter()
                .map(|o| ObjectRecord {
                    bbox: o.bbox,
                    cls: map.class_name(o.cls).expect("validated class").to_string(),
                })
                .collect(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("plain record serializes"));
        out.push('\n');
    }
    out
}

fn read(path: &Path) -> Result<String, DatasetError> {
    fs::read_to_string(path).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })
}

/// Reads and validates `classes.tsv` and `annotations.jsonl` under `root`.
///
/// Image files are not opened here; they are read when a stage needs pixels.
pub fn load_dataset(root: &Path) -> Result<Dataset, DatasetError> {
    load_annotation_file(root, ANNOTATIONS_FILE)
}

/// Like [`load_dataset`] but reads the annotations from `file` under `root`,
/// e.g. one split of the dataset.
pub fn load_annotation_file(root: &Path, file: &str) -> Result<Dataset, DatasetError> {
    let map = parse_class_table(&read(&root.join(CLASSES_FILE))?)?;
    let annotations = parse_annotations(&read(&root.join(file))?, &map)?;
    Ok(Dataset { annotations, brand_map: map })
}

/// Writes `ds`'s annotations to `file` under `root`, leaving the class table alone.
pub fn save_annotation_file(ds: &Dataset, root: &Path, file: &str) -> Result<(), DatasetError> {
    ds.validate()?;
    let path = root.join(file);
    fs::write(&path, render_annotations(&ds.annotations, &ds.brand_map)).map_err(|source| DatasetError::Io { path, source })
}

/// Reads every annotated image from `root`, checking sizes against the annotations.
pub fn load_images(ds: &Dataset, root: &Path) -> Result<Vec<image::RgbImage>, DatasetError> {
    use rayon::prelude::*;
    ds.annotations
        .par_iter()
        .map(|ann| {
            let path = root.join(&ann.image);
            let img = image::open(&path).map_err(|source| DatasetError::Image { path: path.clone(), source })?.to_rgb8();
            if img.dimensions() != (ann.width, ann.height) {
                return Err(DatasetError::Validation {
                    image: ann.image.clone(),
                    message: format!(
                        "file is {}x{}, annotation says {}x{}",
                        img.width(),
                        img.height(),
                        ann.width,
                        ann.height
                    ),
                });
            }
            Ok(img)
        })
        .collect()
}

pub fn save_dataset(ds: &Dataset, root: &Path) -> Result<(), DatasetError> {
    ds.validate()?;
    fs::create_dir_all(root).map_err(|source| DatasetError::Io { path: root.to_path_buf(), source })?;
    for (name, body) in [
        (CLASSES_FILE, render_class_table(&ds.brand_map)),
        (ANNOTATIONS_FILE, render_annotations(&ds.annotations, &ds.brand_map)),
    ] {
        let path = root.join(name);
        fs::write(&path, body).map_err(|source| DatasetError::Io { path, source })?;
    }
    Ok(())
}
