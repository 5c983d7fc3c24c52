//! Minimal two-stage detector: conv backbone, region proposal head and a
//! region-pooled detection head, with hand-written reverse passes.

mod checkpoint;
mod detector;
pub mod gradcheck;
pub mod layers;
mod network;
mod real;
mod tensor;
mod train;

use thiserror::Error;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use detector::{detect, image_tensor, DetectorConfig, Inference};
pub use network::{
    ArchConfig, BackboneTrace, ConvLayer, FeatureMap, HeadOutput, HeadTrace, LinearLayer, NetworkParams, RpnOutput,
    RpnTrace, RPN_VALUES_PER_ANCHOR,
};
pub use real::{gemm, Real};
pub use tensor::Tensor;
pub use train::{
    backward_and_step, forward_loss, sample_rois, train, train_with_progress, EpochRecord, LossConfig, RoiTarget,
    Sampling, SamplingMode, Sgd, StepLoss, TrainConfig, TrainError, TrainOutcome, TrainingPass,
};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid structure: {0}")]
    Structure(String),
    #[error("non-finite gradient in {layer} (max |g| = {max_abs})")]
    NonFiniteGradient { layer: String, max_abs: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
}
