//! Turning raw network outputs into ranked proposals and final detections:
//! delta decoding, clipping, top-k and greedy non-maximum suppression.

use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::geometry::{clip_box, decode_delta, iou, BBox, BoxDelta};
use crate::nn::{HeadOutput, Real, RpnOutput};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    pub bbox: BBox,
    pub score: f64,
    /// Detection-head class index, when the box belongs to a class.
    pub class: Option<usize>,
}

impl ScoredBox {
    pub fn new(bbox: BBox, score: f64) -> Self {
        Self { bbox, score, class: None }
    }
}

/// A final detection: label, certainty in `[0, 1]`, and image-space box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class: Label,
    pub certainty: f64,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

/// Proposal-stage and final-stage filtering knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProposalConfig {
    pub pre_nms_top_k: usize,
    pub post_nms_top_k: usize,
    /// IoU threshold of proposal-stage NMS.
    pub nms_threshold: f64,
    /// Decoded boxes narrower or shorter than this (pixels) are dropped.
    pub min_size: f64,
    /// Detections below this certainty are dropped.
    pub score_threshold: f64,
    /// IoU threshold of the per-class NMS on final detections.
    pub detection_nms_threshold: f64,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self {
            pre_nms_top_k: 200,
            post_nms_top_k: 32,
            nms_threshold: 0.7,
            min_size: 2.0,
            score_threshold: 0.5,
            detection_nms_threshold: 0.3,
        }
    }
}

impl ProposalConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.pre_nms_top_k == 0 || self.post_nms_top_k == 0 {
            return Err("top-k values must be at least 1".into());
        }
        for (name, v) in [
            ("nms_threshold", self.nms_threshold),
            ("score_threshold", self.score_threshold),
            ("detection_nms_threshold", self.detection_nms_threshold),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(format!("{name} = {v} must lie in (0, 1)"));
            }
        }
        if !(self.min_size >= 0.0) {
            return Err(format!("min_size = {} must be nonnegative", self.min_size));
        }
        Ok(())
    }
}

/// Indices of `scores` in descending order; equal scores keep index order.
fn rank_by_score(scores: impl Iterator<Item = f64>) -> Vec<usize> {
    let scores: Vec<f64> = scores.collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Greedy NMS. Repeatedly keeps the best remaining candidate and discards
/// every remaining candidate whose IoU with it is `>= iou_threshold`.
/// Returns indices into `boxes` in descending score order.
pub fn nms_indices(boxes: &[BBox], scores: &[f64], iou_threshold: f64) -> Vec<usize> {
    let order = rank_by_score(scores.iter().copied());
    let mut suppressed = vec![false; boxes.len()];
    let mut keep = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        for &j in &order[pos + 1..] {
            if !suppressed[j] && iou(&boxes[i], &boxes[j]) >= iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    keep
}

pub fn nms(candidates: &[ScoredBox], iou_threshold: f64) -> Vec<ScoredBox> {
    let boxes: Vec<BBox> = candidates.iter().map(|c| c.bbox).collect();
    let scores: Vec<f64> = candidates.iter().map(|c| c.score).collect();
    nms_indices(&boxes, &scores, iou_threshold).into_iter().map(|i| candidates[i]).collect()
}

/// Decodes every anchor, clips to the image, drops boxes smaller than
/// `min_size`, keeps the `pre_nms_top_k` best by objectness, applies NMS and
/// keeps `post_nms_top_k`.
pub fn select_proposals<T: Real>(
    rpn: &RpnOutput<T>,
    anchors: &[BBox],
    image_width: f64,
    image_height: f64,
    cfg: &ProposalConfig,
) -> Vec<ScoredBox> {
    let mut candidates = Vec::with_capacity(anchors.len());
    for (i, anchor) in anchors.iter().enumerate().take(rpn.len()) {
        let d = rpn.deltas[i];
        let delta = BoxDelta::new(d[0].as_f64(), d[1].as_f64(), d[2].as_f64(), d[3].as_f64());
        let Ok(decoded) = decode_delta(anchor, &delta) else {
            continue;
        };
        let b = clip_box(&decoded, image_width, image_height);
        if b.width() < cfg.min_size || b.height() < cfg.min_size {
            continue;
        }
        candidates.push(ScoredBox::new(b, rpn.objectness(i)));
    }
    let order = rank_by_score(candidates.iter().map(|c| c.score));
    let top: Vec<ScoredBox> = order.into_iter().take(cfg.pre_nms_top_k).map(|i| candidates[i]).collect();
    let mut kept = nms(&top, cfg.nms_threshold);
    kept.truncate(cfg.post_nms_top_k);
    kept
}

/// Per non-background class: refine each proposal with its class delta,
/// drop certainties below `score_threshold`, run per-class NMS. Output is
/// ordered by descending certainty.
pub fn finalize_detections<T: Real>(
    proposals: &[BBox],
    head: &HeadOutput<T>,
    image_width: f64,
    image_height: f64,
    score_threshold: f64,
    nms_threshold: f64,
) -> Vec<Detection> {
    let mut all = Vec::new();
    for class in 1..head.num_classes {
        let Some(label) = Label::from_class_index(class) else {
            continue;
        };
        let mut cands = Vec::new();
        for (i, proposal) in proposals.iter().enumerate().take(head.len()) {
            let certainty = head.probs_row(i)[class];
            if certainty < score_threshold {
                continue;
            }
            let Ok(refined) = decode_delta(proposal, &BoxDelta::from_array(head.delta(i, class))) else {
                continue;
            };
            let b = clip_box(&refined, image_width, image_height);
            if b.area() <= 0.0 {
                continue;
            }
            cands.push(ScoredBox { bbox: b, score: certainty, class: Some(class) });
        }
        all.extend(nms(&cands, nms_threshold).into_iter().map(|c| Detection {
            class: label,
            certainty: c.score,
            bbox: c.bbox,
        }));
    }
    all.sort_by(|a, b| b.certainty.total_cmp(&a.certainty));
    all
}
