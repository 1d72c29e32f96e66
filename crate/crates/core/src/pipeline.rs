//! End-to-end orchestration shared by the CLI, sweeps and benchmarks.

use image::RgbImage;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::brand::{recognize_brand, Aggregation, BrandError, BrandPrediction};
use crate::config::{Config, ConfigError, EvalConfig};
use crate::dataset::synth::{procedural_backgrounds, procedural_templates};
use crate::dataset::{synthesize_dataset, Dataset, DatasetError, SynthOutput};
use crate::eval::{brand_accuracy, brand_auc, evaluate_detections, AucReport, BrandAccuracy, DetectionEval, EvalError};
use crate::geometry::{BoundingBox, BrandId};
use crate::network::{
    detect_image, image_tensor, train, NetworkError, NetworkParams, StageTimings, TrainConfig, TrainOutput,
};
use crate::postprocess::{postprocess_image, ImageDetections, PostprocessError, PostprocessParams};
use crate::proposals::{selective_search, ProposalError, ProposalParams, ProposalSet};
use crate::svd::SvdError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Proposal(#[from] ProposalError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Postprocess(#[from] PostprocessError),
    #[error(transparent)]
    Brand(#[from] BrandError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Svd(#[from] SvdError),
    #[error("{0}")]
    Mismatch(String),
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
}

impl PipelineError {
    /// Whether the failure stems from user-supplied configuration or inputs
    /// rather than from a computation going wrong.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            PipelineError::Config(_) | PipelineError::InvalidSweep(_) | PipelineError::Svd(SvdError::InvalidSpec(_))
        )
    }
}

/// One split's annotations with its decoded images and ranked proposals,
/// aligned by index.
#[derive(Clone, Copy)]
pub struct SplitData<'a> {
    pub ds: &'a Dataset,
    pub images: &'a [RgbImage],
    pub proposals: &'a [Vec<BoundingBox>],
}

impl<'a> SplitData<'a> {
    pub fn new(ds: &'a Dataset, images: &'a [RgbImage], proposals: &'a [Vec<BoundingBox>]) -> Result<Self, PipelineError> {
        if images.len() != ds.len() || proposals.len() != ds.len() {
            return Err(PipelineError::Mismatch(format!(
                "{} annotations, {} images, {} proposal sets",
                ds.len(),
                images.len(),
                proposals.len()
            )));
        }
        Ok(SplitData { ds, images, proposals })
    }
}

/// Owned counterpart of [`SplitData`].
#[derive(Clone)]
pub struct OwnedSplit {
    pub ds: Dataset,
    pub images: Vec<RgbImage>,
    pub proposals: Vec<Vec<BoundingBox>>,
}

impl OwnedSplit {
    /// Selects the images of `part` (a subset of `full`) together with their pixels and proposals.
    pub fn select(full: SplitData<'_>, part: &Dataset) -> Result<OwnedSplit, PipelineError> {
        let pos: std::collections::HashMap<&str, usize> =
            full.ds.annotations.iter().enumerate().map(|(i, a)| (a.image.as_str(), i)).collect();
        let mut images = Vec::with_capacity(part.len());
        let mut proposals = Vec::with_capacity(part.len());
        for a in &part.annotations {
            let &i = pos
                .get(a.image.as_str())
                .ok_or_else(|| PipelineError::Mismatch(format!("image {} is not in the source set", a.image)))?;
            images.push(full.images[i].clone());
            proposals.push(full.proposals[i].clone());
        }
        Ok(OwnedSplit { ds: part.clone(), images, proposals })
    }

    pub fn view(&self) -> SplitData<'_> {
        SplitData { ds: &self.ds, images: &self.images, proposals: &self.proposals }
    }
}

/// Trains on a split with the config's derived training seed.
pub fn train_on(cfg: &Config, data: SplitData<'_>) -> Result<TrainOutput, PipelineError> {
    train_with(&cfg.train_config(), data)
}

pub fn train_with(train_cfg: &TrainConfig, data: SplitData<'_>) -> Result<TrainOutput, PipelineError> {
    Ok(train(data.ds, data.images, data.proposals, train_cfg)?)
}

/// Synthetic dataset described by the config.
pub fn synthesize(cfg: &Config) -> Result<SynthOutput, PipelineError> {
    let s = &cfg.synth;
    let (map, templates) = procedural_templates(s.num_brands, s.logos_per_brand);
    let backgrounds = procedural_backgrounds(s.num_backgrounds, s.image_width, s.image_height, cfg.background_seed());
    Ok(synthesize_dataset(&templates, &backgrounds, &map, &cfg.synthesis_params(), s.num_images)?)
}

/// Ranked selective-search boxes per image.
pub fn compute_proposals(images: &[RgbImage], params: &ProposalParams) -> Result<Vec<Vec<BoundingBox>>, PipelineError> {
    params.validate()?;
    Ok(images
        .par_iter()
        .map(|img| selective_search(img, params).into_iter().map(|p| p.bbox).collect())
        .collect())
}

pub fn proposal_sets(ds: &Dataset, proposals: &[Vec<BoundingBox>]) -> Vec<ProposalSet> {
    ds.annotations
        .iter()
        .zip(proposals)
        .map(|(a, p)| ProposalSet { image: a.image.clone(), boxes: p.clone() })
        .collect()
}

/// Proposals aligned with the dataset's image order.
pub fn align_proposals(ds: &Dataset, sets: &[ProposalSet]) -> Result<Vec<Vec<BoundingBox>>, PipelineError> {
    let index: std::collections::HashMap<&str, &ProposalSet> = sets.iter().map(|s| (s.image.as_str(), s)).collect();
    ds.annotations
        .iter()
        .map(|a| {
            index
                .get(a.image.as_str())
                .map(|s| s.boxes.clone())
                .ok_or_else(|| PipelineError::Mismatch(format!("no proposals for image {}", a.image)))
        })
        .collect()
}

pub struct DetectionRun {
    pub detections: Vec<ImageDetections>,
    pub timings: Vec<StageTimings>,
    /// Post-processing wall time per image.
    pub post_times: Vec<std::time::Duration>,
}

/// Runs the detector on every image with its first `roi_count` proposals.
pub fn detect_dataset(
    params: &NetworkParams<f32>,
    data: SplitData<'_>,
    roi_count: usize,
    post: &PostprocessParams,
) -> Result<DetectionRun, PipelineError> {
    let per_image = data
        .ds
        .annotations
        .par_iter()
        .zip(data.images.par_iter().zip(data.proposals.par_iter()))
        .map(|(ann, (img, props))| {
            let rois = &props[..roi_count.min(props.len())];
            let raw = detect_image(params, &image_tensor(img), rois)?;
            let t = std::time::Instant::now();
            let dets = postprocess_image(rois, &raw.class_probs, &raw.offsets, ann.size(), post)?;
            Ok((ImageDetections { image: ann.image.clone(), detections: dets }, raw.timings, t.elapsed()))
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    let mut run = DetectionRun { detections: Vec::new(), timings: Vec::new(), post_times: Vec::new() };
    for (d, t, p) in per_image {
        run.detections.push(d);
        run.timings.push(t);
        run.post_times.push(p);
    }
    Ok(run)
}

/// Ground-truth brand per image; images without logos are skipped.
pub fn brand_labels(ds: &Dataset) -> Result<Vec<(String, BrandId)>, PipelineError> {
    let mut out = Vec::new();
    for a in &ds.annotations {
        if let Some(b) = a.brand(&ds.brand_map)? {
            out.push((a.image.clone(), b));
        }
    }
    Ok(out)
}

pub fn brand_predictions(
    dets: &[ImageDetections],
    ds: &Dataset,
    agg: Aggregation,
    min_score: f64,
) -> Result<Vec<(String, BrandPrediction)>, PipelineError> {
    dets.iter()
        .map(|d| Ok((d.image.clone(), recognize_brand(&d.detections, &ds.brand_map, agg, min_score)?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub detection: DetectionEval,
    pub accuracy: BrandAccuracy,
    pub auc: Option<AucReport>,
}

/// Detection AP, brand accuracy and brand AUC of one detection run.
pub fn evaluate_run(ds: &Dataset, dets: &[ImageDetections], cfg: &EvalConfig) -> Result<EvalSummary, PipelineError> {
    let detection = evaluate_detections(ds, dets, cfg.iou_threshold, cfg.ap_mode)?;
    let labels = brand_labels(ds)?;
    let by_image: std::collections::HashMap<&str, &ImageDetections> =
        dets.iter().map(|d| (d.image.as_str(), d)).collect();
    let empty = Vec::new();
    let mut preds = Vec::with_capacity(labels.len());
    let mut scores = Vec::with_capacity(labels.len());
    for (name, _) in &labels {
        let d = by_image.get(name.as_str()).map_or(&empty, |d| &d.detections);
        let p = recognize_brand(d, &ds.brand_map, cfg.aggregation, cfg.min_brand_score)?;
        preds.push((name.clone(), p.decision));
        scores.push(p.scores);
    }
    let nb = ds.brand_map.num_brands();
    let accuracy = brand_accuracy(&preds, &labels, nb)?;
    let ids: Vec<BrandId> = labels.iter().map(|l| l.1).collect();
    let auc = match brand_auc(&scores, &ids, nb) {
        Ok(a) => Some(a),
        Err(EvalError::TooFewBrands) => None,
        Err(e) => return Err(e.into()),
    };
    Ok(EvalSummary { detection, accuracy, auc })
}
