//! Annotated datasets: file formats, splitting, statistics and synthesis.

mod io;
mod split;
mod stats;
pub mod synth;

pub use io::{
    load_annotation_file, load_dataset, load_images, parse_annotations, parse_class_table, render_annotations, render_class_table,
    save_annotation_file, save_dataset, ANNOTATIONS_FILE, CLASSES_FILE,
};
pub use split::{split_dataset, SplitFractions};
pub use stats::{dataset_stats, ClassCount, DatasetStats};
pub use synth::{synthesize_dataset, SynthesisParams, SynthOutput};

use std::collections::HashSet;
use std::path::PathBuf;

use thiserror::Error;

use crate::geometry::{BoundingBox, BrandId, BrandMap, BrandMapError, ImageSize, LogoClassId};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error("image {image}: {message}")]
    Validation { image: String, message: String },
    #[error(transparent)]
    BrandMap(#[from] BrandMapError),
    #[error("invalid split fractions {0:?}: need non-negative values summing to 1")]
    InvalidFractions([f64; 3]),
    #[error("template {class} is {width}x{height} at minimum scale, larger than the {bg_width}x{bg_height} background")]
    TemplateTooLarge {
        class: String,
        width: u32,
        height: u32,
        bg_width: u32,
        bg_height: u32,
    },
    #[error("invalid synthesis parameters: {0}")]
    InvalidParams(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        source: image::ImageError,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedObject {
    pub bbox: BoundingBox,
    pub cls: LogoClassId,
}

/// Ground truth for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    /// Path relative to the dataset root.
    pub image: String,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<AnnotatedObject>,
}

impl Annotation {
    pub fn size(&self) -> ImageSize {
        ImageSize::new(self.width, self.height)
    }

    pub fn boxes(&self) -> Vec<BoundingBox> {
        self.objects.iter().map(|o| o.bbox).collect()
    }

    /// The single brand shown in the image, `None` for logo-free images.
    pub fn brand(&self, map: &BrandMap) -> Result<Option<BrandId>, DatasetError> {
        let mut brand = None;
        for o in &self.objects {
            let b = map.brand_of(o.cls).ok_or_else(|| self.invalid("unknown class"))?;
            match brand {
                None => brand = Some(b),
                Some(prev) if prev != b => {
                    return Err(self.invalid("logos of more than one brand; brand evaluation needs single-brand ground truth"))
                }
                _ => {}
            }
        }
        Ok(brand)
    }

    fn invalid(&self, message: &str) -> DatasetError {
        DatasetError::Validation { image: self.image.clone(), message: message.to_string() }
    }

    pub fn validate(&self, map: &BrandMap) -> Result<(), DatasetError> {
        if self.width == 0 || self.height == 0 {
            return Err(self.invalid("image has zero size"));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if !o.bbox.is_within(self.size()) {
                return Err(self.invalid(&format!(
                    "object {i} box {:?} exceeds image {}x{}",
                    o.bbox.to_array(),
                    self.width,
                    self.height
                )));
            }
            if o.cls.is_background() || o.cls.index() > map.num_classes() {
                return Err(self.invalid(&format!("object {i} has unknown class id {}", o.cls.0)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub annotations: Vec<Annotation>,
    pub brand_map: BrandMap,
}

impl Dataset {
    pub fn new(annotations: Vec<Annotation>, brand_map: BrandMap) -> Result<Self, DatasetError> {
        let ds = Dataset { annotations, brand_map };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut seen = HashSet::new();
        for a in &self.annotations {
            if !seen.insert(a.image.as_str()) {
                return Err(a.invalid("duplicate image path"));
            }
            a.validate(&self.brand_map)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.annotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.annotations.is_empty()
    }

    pub fn num_objects(&self) -> usize {
        self.annotations.iter().map(|a| a.objects.len()).sum()
    }

    /// A dataset with the same class table and the selected images.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            annotations: indices.iter().map(|&i| self.annotations[i].clone()).collect(),
            brand_map: self.brand_map.clone(),
        }
    }
}
