//! Run configuration: one JSON document with a section per module.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::brand::Aggregation;
use crate::dataset::{SplitFractions, SynthesisParams};
use crate::eval::ApMode;
use crate::network::TrainConfig;
use crate::postprocess::PostprocessParams;
use crate::proposals::ProposalParams;
use crate::rng::derive_seed;
use crate::svd::RankSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("config key {key}: {message}")]
    Invalid { key: String, message: String },
}

fn invalid(key: &str, message: impl ToString) -> ConfigError {
    ConfigError::Invalid { key: key.to_string(), message: message.to_string() }
}

/// Synthetic dataset generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_brands: usize,
    pub logos_per_brand: usize,
    pub image_width: u32,
    pub image_height: u32,
    pub num_images: usize,
    pub num_backgrounds: usize,
    pub params: SynthesisParams,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_brands: 5,
            logos_per_brand: 2,
            image_width: 224,
            image_height: 224,
            num_images: 800,
            num_backgrounds: 24,
            params: SynthesisParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub ap_mode: ApMode,
    pub aggregation: Aggregation,
    /// Minimum brand score for a brand decision.
    pub min_brand_score: f64,
    /// Proposals per image fed to the detector at test time.
    pub roi_count: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_threshold: 0.5,
            ap_mode: ApMode::AllPoints,
            aggregation: Aggregation::Max,
            min_brand_score: 0.1,
            roi_count: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvdConfig {
    pub rank: RankSpec,
}

impl Default for SvdConfig {
    fn default() -> Self {
        SvdConfig { rank: RankSpec::RankFraction(0.25) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    /// Test images timed per mode.
    pub images: usize,
    /// Untimed passes before measuring.
    pub warmup: usize,
    /// Proposals per image in the timed runs.
    pub roi_count: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig { images: 10, warmup: 1, roi_count: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Master seed; every component seed is derived from it.
    pub seed: u64,
    pub synth: SynthConfig,
    pub split: SplitFractions,
    pub proposals: ProposalParams,
    pub train: TrainConfig,
    pub postprocess: PostprocessParams,
    pub eval: EvalConfig,
    pub svd: SvdConfig,
    pub benchmark: BenchmarkConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 7,
            synth: SynthConfig::default(),
            split: SplitFractions::default(),
            proposals: ProposalParams::default(),
            train: TrainConfig::default(),
            postprocess: PostprocessParams::default(),
            eval: EvalConfig::default(),
            svd: SvdConfig::default(),
            benchmark: BenchmarkConfig::default(),
        }
    }
}

impl Config {
    /// Parses JSON; unknown keys and type errors report their key path.
    pub fn from_json(text: &str, origin: &str) -> Result<Config, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
            path: format!("{origin} at {}", e.path()),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Component seeds must be left at 0: they are derived from `seed`.
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (key, v) in [
            ("synth.params.seed", self.synth.params.seed),
            ("proposals.seed", self.proposals.seed),
            ("train.seed", self.train.seed),
        ] {
            if v != 0 {
                return Err(invalid(key, "component seeds are derived from the top-level seed; leave at 0"));
            }
        }
        self.synth.params.validate().map_err(|e| invalid("synth.params", e))?;
        let s = &self.synth;
        if s.num_brands == 0 || s.logos_per_brand == 0 {
            return Err(invalid("synth", "need at least one brand and one logo per brand"));
        }
        if s.num_images == 0 || s.num_backgrounds == 0 || s.image_width == 0 || s.image_height == 0 {
            return Err(invalid("synth", "image counts and sizes must be positive"));
        }
        self.split.validate().map_err(|e| invalid("split", e))?;
        self.proposals.validate().map_err(|e| invalid("proposals", e))?;
        self.train.validate().map_err(|e| invalid("train", e))?;
        let p = &self.postprocess;
        if !(0.0..=1.0).contains(&p.score_threshold) {
            return Err(invalid("postprocess.score_threshold", "must lie in [0, 1]"));
        }
        if !(p.nms_iou > 0.0 && p.nms_iou <= 1.0) {
            return Err(invalid("postprocess.nms_iou", "must lie in (0, 1]"));
        }
        let e = &self.eval;
        if !(e.iou_threshold > 0.0 && e.iou_threshold <= 1.0) {
            return Err(invalid("eval.iou_threshold", "must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&e.min_brand_score) {
            return Err(invalid("eval.min_brand_score", "must lie in [0, 1]"));
        }
        if e.roi_count == 0 {
            return Err(invalid("eval.roi_count", "must be positive"));
        }
        self.svd.rank.validate().map_err(|e| invalid("svd.rank", e))?;
        if self.benchmark.images == 0 || self.benchmark.roi_count == 0 {
            return Err(invalid("benchmark", "images and roi_count must be positive"));
        }
        Ok(())
    }

    pub fn synthesis_params(&self) -> SynthesisParams {
        SynthesisParams { seed: derive_seed(self.seed, "synth"), ..self.synth.params.clone() }
    }

    pub fn background_seed(&self) -> u64 {
        derive_seed(self.seed, "backgrounds")
    }

    pub fn split_seed(&self) -> u64 {
        derive_seed(self.seed, "split")
    }

    pub fn proposal_params(&self) -> ProposalParams {
        ProposalParams { seed: derive_seed(self.seed, "proposals"), ..self.proposals.clone() }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: derive_seed(self.seed, "train"), ..self.train.clone() }
    }
}
