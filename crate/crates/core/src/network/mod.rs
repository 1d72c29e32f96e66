//! The trainable region detector.
//!
//! A small convolutional backbone feeds RoI (or pyramid) pooling, a fully
//! connected trunk, and two heads: a softmax over C + 1 classes and 4 C
//! per-class box offsets. In shared-map mode the backbone runs once per
//! image; in per-region mode every region is warped and run separately.

mod checkpoint;
mod detect;
mod forward;
mod gradcheck;
mod labels;
mod layers;
mod loss;
mod model;
mod pool;
mod tensor;
mod train;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointError, VERSION as CHECKPOINT_VERSION,
};
pub use detect::{detect_image, RawDetections, StageTimings};
pub use forward::RoiExample;
pub use gradcheck::{gradient_check, GradCheckBatch, GradCheckOptions, GradCheckReport, GradientFault};
pub use labels::{assign_roi_labels, LabeledRoi, TrainConfig};
pub use layers::{relu_in_place, ConvLayer, ConvSpec, Linear};
pub use loss::{multitask_loss, smooth_l1, LossParts};
pub use model::{head_forward, softmax, ArchSpec, FcLayer, Grads, HeadOutput, NetworkParams, PipelineMode};
pub use pool::{pool_features, project_roi, roi_pool, spp_pool, warp_region, Pooling};
pub use tensor::{image_tensor, Real, Tensor, PIXEL_MEAN, PIXEL_SCALE};
pub use train::{label_dataset, render_loss_trace, smoothed_loss, target_statistics, train, LossRecord, TrainOutput};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("image {height}x{width} is too small for a backbone of stride {minimum}")]
    ImageTooSmall { height: usize, width: usize, minimum: usize },
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("feature vector has length {got}, expected {expected}")]
    FeatureLength { expected: usize, got: usize },
    #[error("image {0} has no proposals")]
    MissingProposals(String),
    #[error("minibatch has no foreground regions after resampling")]
    NoForegroundRoIs,
    #[error("training diverged at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}
