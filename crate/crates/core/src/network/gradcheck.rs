//! Analytic versus central-difference gradients of the end-to-end loss.

use rand::seq::index::sample;

use super::forward::{image_loss, RoiExample};
use super::model::NetworkParams;
use super::tensor::Tensor;
use super::NetworkError;
use crate::rng::stream_rng;

/// One image and its labelled regions.
#[derive(Debug, Clone)]
pub struct GradCheckBatch {
    pub image: Tensor<f64>,
    pub rois: Vec<RoiExample>,
    pub lambda: f64,
}

/// Multiplies the analytic gradient of one tensor, to exercise the checker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientFault {
    pub tensor: usize,
    pub factor: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Entries sampled per tensor; smaller tensors are checked exhaustively.
    pub samples_per_tensor: usize,
    /// Denominator floor for the relative error.
    pub floor: f64,
    pub seed: u64,
    pub fault: Option<GradientFault>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { eps: 1e-4, samples_per_tensor: 40, floor: 1e-3, seed: 0, fault: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max over checked entries of `|analytic - numeric| / max(|numeric|, floor)`.
    pub max_rel_error: f64,
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    /// Entries whose perturbation crossed a kink of a piecewise-linear unit.
    pub skipped_kinks: usize,
}

pub fn gradient_check(
    params: &NetworkParams<f64>,
    batch: &GradCheckBatch,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, NetworkError> {
    let eval = |p: &NetworkParams<f64>| -> Result<(f64, u64), NetworkError> {
        let mut pat = 0u64;
        let loss = image_loss(p, &batch.image, &batch.rois, batch.lambda, 1.0, None, Some(&mut pat))?;
        Ok((loss, pat))
    };
    let mut grads = params.zero_grads();
    let mut base_pattern = 0u64;
    image_loss(params, &batch.image, &batch.rois, batch.lambda, 1.0, Some(&mut grads), Some(&mut base_pattern))?;
    if let Some(f) = opts.fault {
        grads[f.tensor].iter_mut().for_each(|g| *g *= f.factor);
    }

    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, checked: 0, skipped_kinks: 0 };
    let mut probe = params.clone();
    for (t, name) in names.iter().enumerate() {
        let len = grads[t].len();
        let mut rng = stream_rng(opts.seed, t as u64);
        let idx: Vec<usize> = if len <= opts.samples_per_tensor {
            (0..len).collect()
        } else {
            let mut v = sample(&mut rng, len, opts.samples_per_tensor).into_vec();
            v.sort_unstable();
            v
        };
        for i in idx {
            let orig = probe.tensors()[t].1[i];
            probe.tensors_mut()[t][i] = orig + opts.eps;
            let (plus, pat_plus) = eval(&probe)?;
            probe.tensors_mut()[t][i] = orig - opts.eps;
            let (minus, pat_minus) = eval(&probe)?;
            probe.tensors_mut()[t][i] = orig;
            if pat_plus != base_pattern || pat_minus != base_pattern {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let rel = (grads[t][i] - numeric).abs() / numeric.abs().max(opts.floor);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}
