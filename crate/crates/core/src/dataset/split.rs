use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetError};
use crate::rng::stream_rng;

/// Train/validation/test fractions of the image set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions { train: 0.5, val: 0.2, test: 0.3 }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let f = [self.train, self.val, self.test];
        let ok = f.iter().all(|v| v.is_finite() && *v >= 0.0) && (f.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
        if ok {
            Ok(())
        } else {
            Err(DatasetError::InvalidFractions(f))
        }
    }
}

// Guards floor() against products such as 0.29 * 100 = 28.999999999999996.
fn floor_count(n: usize, f: f64) -> usize {
    ((n as f64 * f) + 1e-9).floor() as usize
}

/// Image-level random partition. Train and validation get `floor(N * f)`
/// images, test receives the remainder. Each split keeps the input order.
pub fn split_dataset(
    ds: &Dataset,
    fractions: SplitFractions,
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset), DatasetError> {
    fractions.validate()?;
    let n = ds.len();
    let n_train = floor_count(n, fractions.train).min(n);
    let n_val = floor_count(n, fractions.val).min(n - n_train);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, 0));
    let mut parts = [
        order[..n_train].to_vec(),
        order[n_train..n_train + n_val].to_vec(),
        order[n_train + n_val..].to_vec(),
    ];
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok((ds.subset(&parts[0]), ds.subset(&parts[1]), ds.subset(&parts[2])))
}
