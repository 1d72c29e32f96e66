//! Region-based logo detection and brand recognition.
//!
//! The pipeline runs selective-search proposals through a small
//! convolutional detector with a softmax classifier and per-class box
//! regressors, suppresses duplicates, and reduces logo detections to a
//! brand decision per image. Around it sit dataset tooling, truncated-SVD
//! compression of the fully connected layers, and the evaluation harness.

pub mod brand;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod geometry;
pub mod network;
pub mod pipeline;
pub mod postprocess;
pub mod proposals;
pub mod report;
pub mod rng;
pub mod svd;

pub use geometry::{
    bbox_decode, bbox_encode, iou, BoundingBox, BrandId, BrandMap, Detection, GeometryError, ImageSize,
    LogoClassId, RegressionTarget,
};
