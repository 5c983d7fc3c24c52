use serde::{Deserialize, Serialize};

use super::{ArchConfig, NetError, NetworkParams, Real, Tensor};
use crate::anchors::{generate_anchors, AnchorSpec, AssignThresholds};
use crate::dataset::GrayImage;
use crate::geometry::BBox;
use crate::proposals::{finalize_detections, select_proposals, Detection, ProposalConfig};

/// Everything that fixes the detector's structure and inference behaviour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct DetectorConfig {
    pub arch: ArchConfig,
    pub anchors: AnchorSpec,
    pub assign: AssignThresholds,
    pub proposals: ProposalConfig,
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        self.arch.validate()?;
        self.anchors.validate().map_err(|e| NetError::Structure(e.to_string()))?;
        self.proposals.validate().map_err(NetError::Structure)?;
        if self.arch.anchors_per_cell != self.anchors.anchors_per_cell() {
            return Err(NetError::Structure(format!(
                "network has {} anchors per cell, anchor spec generates {}",
                self.arch.anchors_per_cell,
                self.anchors.anchors_per_cell()
            )));
        }
        if self.arch.stride() != self.anchors.stride {
            return Err(NetError::Structure(format!(
                "backbone stride {} differs from anchor stride {}",
                self.arch.stride(),
                self.anchors.stride
            )));
        }
        if !(self.assign.pos_iou > self.assign.neg_iou && self.assign.neg_iou >= 0.0 && self.assign.pos_iou <= 1.0) {
            return Err(NetError::Structure(format!(
                "assignment thresholds pos {} / neg {} invalid",
                self.assign.pos_iou, self.assign.neg_iou
            )));
        }
        Ok(())
    }
}

/// `1 x H x W` tensor with intensities scaled to [0, 1].
pub fn image_tensor<T: Real>(img: &GrayImage) -> Tensor<T> {
    let data = img.pixels.iter().map(|&p| T::from_f64(p as f64 / 255.0)).collect();
    Tensor::from_vec(&[1, img.height as usize, img.width as usize], data).expect("pixel count matches")
}

/// Proposals and their head outputs for one image.
#[derive(Debug, Clone)]
pub struct Inference {
    pub proposals: Vec<BBox>,
    pub detections: Vec<Detection>,
}

/// Full forward pipeline; keeps detections with certainty >= `score_threshold`.
pub fn detect<T: Real>(
    params: &NetworkParams<T>,
    cfg: &DetectorConfig,
    image: &GrayImage,
    score_threshold: f64,
) -> Result<Inference, NetError> {
    let (w, h) = (image.width as f64, image.height as f64);
    let (features, _) = params.backbone_forward(&image_tensor(image))?;
    let (rpn, _) = params.rpn_forward(&features)?;
    let anchors = generate_anchors(features.width, features.height, &cfg.anchors);
    let proposals: Vec<BBox> =
        select_proposals(&rpn, &anchors, w, h, &cfg.proposals).into_iter().map(|s| s.bbox).collect();
    if proposals.is_empty() {
        return Ok(Inference { proposals, detections: Vec::new() });
    }
    let (head, _) = params.detect_forward(&features, &proposals)?;
    let detections =
        finalize_detections(&proposals, &head, w, h, score_threshold, cfg.proposals.detection_nms_threshold);
    Ok(Inference { proposals, detections })
}
