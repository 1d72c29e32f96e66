//! One-axis parameter sweeps over the full pipeline.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::network::NetworkParams;
use crate::pipeline::{detect_dataset, evaluate_run, train_with, DetectionRun, EvalSummary, OwnedSplit, PipelineError, SplitData};
use crate::proposals::recall_counts;
use crate::report::to_csv;
use crate::rng::{derive_seed, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Proposals per test image.
    RoiCount,
    /// SGD iterations.
    TrainIterations,
    /// Share of the training split used, as nested subsets.
    TrainFraction,
    /// IoU threshold of the evaluation; one detection pass serves all values.
    EvalIou,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::RoiCount => "roi_count",
            SweepAxis::TrainIterations => "train_iterations",
            SweepAxis::TrainFraction => "train_fraction",
            SweepAxis::EvalIou => "eval_iou",
        }
    }

    /// Rejects values outside the axis domain.
    pub fn check(self, v: f64) -> Result<(), String> {
        let ok = match self {
            SweepAxis::RoiCount | SweepAxis::TrainIterations => v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64,
            SweepAxis::TrainFraction | SweepAxis::EvalIou => v > 0.0 && v <= 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(format!("value {v} is not valid for axis {}", self.name()))
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        [SweepAxis::RoiCount, SweepAxis::TrainIterations, SweepAxis::TrainFraction, SweepAxis::EvalIou]
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown sweep axis {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub summary: EvalSummary,
    /// Ground-truth recall of the proposals fed to the detector.
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
    /// Detector passes over the test split.
    pub detection_passes: usize,
    /// Training runs performed.
    pub trainings: usize,
}

/// Nested training subsets: the first `floor(f * n)` images (at least one)
/// of one seeded permutation, kept in input order.
pub fn fraction_subset(n: usize, fraction: f64, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, 0));
    let k = ((n as f64 * fraction + 1e-9).floor() as usize).clamp(1.min(n), n);
    let mut pick = order[..k].to_vec();
    pick.sort_unstable();
    pick
}

fn proposal_recall_at(data: SplitData<'_>, roi_count: usize, iou: f64) -> f64 {
    let (mut hit, mut total) = (0, 0);
    for (a, p) in data.ds.annotations.iter().zip(data.proposals) {
        let (h, n) = recall_counts(&p[..roi_count.min(p.len())], &a.boxes(), iou);
        hit += h;
        total += n;
    }
    if total == 0 {
        1.0
    } else {
        hit as f64 / total as f64
    }
}

/// Evaluates the pipeline at every value of one axis, everything else fixed
/// by `cfg`. A supplied `model` is reused by axes that do not retrain;
/// otherwise one is trained on `train`.
pub fn run_sweep(
    axis: SweepAxis,
    values: &[f64],
    cfg: &Config,
    train: SplitData<'_>,
    test: SplitData<'_>,
    model: Option<&NetworkParams<f32>>,
) -> Result<SweepResult, PipelineError> {
    if values.is_empty() {
        return Err(PipelineError::InvalidSweep("no values".into()));
    }
    if values.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(PipelineError::InvalidSweep("values must be sorted ascending".into()));
    }
    for &v in values {
        axis.check(v).map_err(PipelineError::InvalidSweep)?;
    }
    let mut result = SweepResult { axis, rows: Vec::new(), detection_passes: 0, trainings: 0 };
    let iou = cfg.eval.iou_threshold;
    let roi = cfg.eval.roi_count;

    let mut trained = None;
    let mut fixed_model = |result: &mut SweepResult| -> Result<NetworkParams<f32>, PipelineError> {
        if let Some(m) = model {
            return Ok(m.clone());
        }
        if trained.is_none() {
            result.trainings += 1;
            trained = Some(train_with(&cfg.train_config(), train)?.params);
        }
        Ok(trained.clone().expect("trained above"))
    };
    let detect = |params: &NetworkParams<f32>, rois: usize, result: &mut SweepResult| -> Result<DetectionRun, PipelineError> {
        result.detection_passes += 1;
        detect_dataset(params, test, rois, &cfg.postprocess)
    };

    match axis {
        SweepAxis::EvalIou => {
            let params = fixed_model(&mut result)?;
            let run = detect(&params, roi, &mut result)?;
            let recall = proposal_recall_at(test, roi, iou);
            for &v in values {
                let eval = crate::config::EvalConfig { iou_threshold: v, ..cfg.eval.clone() };
                let summary = evaluate_run(test.ds, &run.detections, &eval)?;
                result.rows.push(SweepRow { value: v, summary, recall });
            }
        }
        SweepAxis::RoiCount => {
            let params = fixed_model(&mut result)?;
            for &v in values {
                let rois = v as usize;
                let run = detect(&params, rois, &mut result)?;
                let summary = evaluate_run(test.ds, &run.detections, &cfg.eval)?;
                result.rows.push(SweepRow { value: v, summary, recall: proposal_recall_at(test, rois, iou) });
            }
        }
        SweepAxis::TrainIterations | SweepAxis::TrainFraction => {
            let recall = proposal_recall_at(test, roi, iou);
            let subset_seed = derive_seed(cfg.seed, "train_fraction");
            for &v in values {
                let mut tc = cfg.train_config();
                let owned;
                let data = if axis == SweepAxis::TrainIterations {
                    tc.iterations = v as usize;
                    train
                } else {
                    let pick = fraction_subset(train.ds.len(), v, subset_seed);
                    owned = OwnedSplit::select(train, &train.ds.subset(&pick))?;
                    owned.view()
                };
                result.trainings += 1;
                let params = train_with(&tc, data)?.params;
                let run = detect(&params, roi, &mut result)?;
                let summary = evaluate_run(test.ds, &run.detections, &cfg.eval)?;
                result.rows.push(SweepRow { value: v, summary, recall });
            }
        }
    }
    Ok(result)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// One row per axis value; undefined metrics are empty fields.
pub fn render_sweep_csv(result: &SweepResult) -> String {
    let header: Vec<String> =
        [result.axis.name(), "map", "accuracy_micro", "accuracy_macro", "auc_macro", "proposal_recall"]
            .iter()
            .map(|s| s.to_string())
            .collect();
    let rows = result.rows.iter().map(|r| {
        vec![
            r.value.to_string(),
            opt(r.summary.detection.map),
            r.summary.accuracy.micro.to_string(),
            r.summary.accuracy.macro_mean.to_string(),
            opt(r.summary.auc.as_ref().map(|a| a.macro_auc)),
            r.recall.to_string(),
        ]
    });
    to_csv(&header, rows)
}
