//! Cross-entropy plus smooth-L1 localization objective.

use crate::geometry::LogoClassId;

/// Loss value and gradients with respect to the logits and the offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub classification: f64,
    pub localization: f64,
    pub grad_logits: Vec<f64>,
    pub grad_offsets: Vec<f64>,
}

pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

pub fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

/// Smallest probability fed to the log; keeps the loss finite.
const MIN_PROB: f64 = 1e-300;

/// `-log p[label] + lambda * [label >= 1] * smoothL1(offsets[label] - target)`.
///
/// `probs` are softmax outputs (C + 1), `offsets` hold 4 values per logo class
/// (4 C). `target` must be present exactly when `label` is a logo class.
pub fn multitask_loss(
    probs: &[f64],
    offsets: &[f64],
    label: LogoClassId,
    target: Option<[f64; 4]>,
    lambda: f64,
) -> LossParts {
    let l = label.index();
    assert!(l < probs.len(), "label {l} outside {} classes", probs.len());
    assert_eq!(offsets.len(), 4 * (probs.len() - 1), "offset width");
    assert_eq!(target.is_some(), l >= 1, "target present iff foreground");

    let classification = -probs[l].max(MIN_PROB).ln();
    let mut grad_logits = probs.to_vec();
    grad_logits[l] -= 1.0;

    let mut grad_offsets = vec![0.0; offsets.len()];
    let mut localization = 0.0;
    if let Some(t) = target {
        let base = 4 * (l - 1);
        for k in 0..4 {
            let d = offsets[base + k] - t[k];
            localization += smooth_l1(d);
            grad_offsets[base + k] = lambda * smooth_l1_grad(d);
        }
    }
    LossParts {
        total: classification + lambda * localization,
        classification,
        localization,
        grad_logits,
        grad_offsets,
    }
}
