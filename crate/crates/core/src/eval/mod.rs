//! Evaluation: detection AP/mAP, brand accuracy and AUC, sweeps and timing.

mod bench;
mod compress;
mod metrics;
mod report;
mod sweep;

pub use bench::{benchmark, render_timing_csv, BenchmarkPlan, BenchmarkReport, MachineInfo, ModeTiming, StageStats};
pub use compress::{compare_compressed, CompressionComparison};
pub use report::{draw_overlay, render_brand_accuracy_csv, render_class_ap_csv};
pub use sweep::{fraction_subset, render_sweep_csv, run_sweep, SweepAxis, SweepResult, SweepRow};

pub use metrics::{
    average_precision, binary_auc, brand_accuracy, brand_auc, detections_by_image, evaluate_detections,
    match_detections, mean_ap, ApMode, AucReport, BrandAccuracy, ClassAp, DetectionEval,
};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("class has no ground-truth objects")]
    NoGroundTruth,
    #[error("predictions and labels cover different images")]
    LabelMismatch,
    #[error("fewer than two brands among the labels")]
    TooFewBrands,
    #[error("detections reference unknown image {0}")]
    UnknownImage(String),
    #[error("image {0} appears twice in the detections")]
    DuplicateImage(String),
}
