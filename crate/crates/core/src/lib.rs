//! Small-data two-stage object detection: box geometry, anchors, the
//! multi-task loss, a compact trainable detector, proposal filtering,
//! annotation-preserving augmentation and VOC-style evaluation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod anchors;
pub mod augment;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod geometry;
pub mod loss;
pub mod nn;
pub mod pipeline;
pub mod proposals;

pub use anchors::{assign_anchors, generate_anchors, sample_minibatch, AnchorLabel, AnchorSpec, AssignThresholds};
pub use config::PipelineConfig;
pub use dataset::{Annotation, DatasetManifest, GrayImage, Label, Sample, SampleKind};
pub use eval::{EvalConfig, EvalReport};
pub use geometry::{decode_delta, encode_delta, iou, BBox, BoxDelta};
pub use nn::{Checkpoint, DetectorConfig, NetworkParams, TrainConfig};
pub use proposals::{Detection, ProposalConfig, ScoredBox};
