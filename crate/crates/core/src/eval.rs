//! VOC2007-style detection evaluation and image-level fracture accuracy.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Annotation, Label, SampleKind};
use crate::geometry::iou;
use crate::proposals::Detection;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: std::path::PathBuf, message: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    #[default]
    Voc2007ElevenPoint,
    AllPoints,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
}

/// One ranked detection after matching.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionMatch {
    pub certainty: f64,
    pub true_positive: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    /// In descending certainty, ties by input index.
    pub matches: Vec<DetectionMatch>,
    pub num_gt: usize,
    pub matched_gt: usize,
}

impl MatchResult {
    pub fn true_positives(&self) -> usize {
        self.matches.iter().filter(|m| m.true_positive).count()
    }

    pub fn unmatched_gt(&self) -> usize {
        self.num_gt - self.matched_gt
    }
}

/// Indices of `certainties` in descending order, ties by index.
fn rank(certainties: impl Iterator<Item = f64>) -> Vec<usize> {
    let c: Vec<f64> = certainties.collect();
    let mut order: Vec<usize> = (0..c.len()).collect();
    order.sort_by(|&a, &b| c[b].total_cmp(&c[a]).then(a.cmp(&b)));
    order
}

/// Greedy matching of `class` detections against same-class boxed ground
/// truth: in descending certainty, each detection takes the unmatched gt with
/// the highest IoU if that IoU reaches `iou_threshold`, otherwise it is a FP.
pub fn match_detections(detections: &[Detection], gt: &[Annotation], class: Label, iou_threshold: f64) -> MatchResult {
    let gt_boxes: Vec<_> = gt.iter().filter(|a| a.label == class).filter_map(|a| a.bbox).collect();
    let dets: Vec<&Detection> = detections.iter().filter(|d| d.class == class).collect();
    let mut taken = vec![false; gt_boxes.len()];
    let mut matches = Vec::with_capacity(dets.len());
    for i in rank(dets.iter().map(|d| d.certainty)) {
        let d = dets[i];
        let mut best: Option<(f64, usize)> = None;
        for (j, g) in gt_boxes.iter().enumerate() {
            if taken[j] {
                continue;
            }
            let v = iou(&d.bbox, g);
            if v >= iou_threshold && best.is_none_or(|(b, _)| v > b) {
                best = Some((v, j));
            }
        }
        if let Some((_, j)) = best {
            taken[j] = true;
        }
        matches.push(DetectionMatch { certainty: d.certainty, true_positive: best.is_some() });
    }
    MatchResult { matches, num_gt: gt_boxes.len(), matched_gt: taken.iter().filter(|&&t| t).count() }
}

/// AP from matches pooled over a test set; `None` when `total_gt` is 0.
pub fn average_precision(matches: &[DetectionMatch], total_gt: usize, interpolation: Interpolation) -> Option<f64> {
    if total_gt == 0 {
        return None;
    }
    let order = rank(matches.iter().map(|m| m.certainty));
    let mut tp_cum = Vec::with_capacity(order.len());
    let mut tp = 0usize;
    for &i in &order {
        tp += usize::from(matches[i].true_positive);
        tp_cum.push(tp);
    }
    let precision: Vec<f64> = tp_cum.iter().enumerate().map(|(k, &t)| t as f64 / (k + 1) as f64).collect();
    // envelope[k] = max precision at rank >= k; recall is non-decreasing in rank
    let mut envelope = precision.clone();
    for k in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[k] = envelope[k].max(envelope[k + 1]);
    }
    Some(match interpolation {
        Interpolation::Voc2007ElevenPoint => {
            let mut sum = 0.0;
            for step in 0..=10usize {
                // recall >= step / 10, compared exactly in integers
                let first = tp_cum.iter().position(|&t| t * 10 >= step * total_gt);
                sum += first.map_or(0.0, |k| envelope[k]);
            }
            sum / 11.0
        }
        Interpolation::AllPoints => {
            let mut ap = 0.0;
            let mut prev_recall = 0.0;
            for k in 0..order.len() {
                let recall = tp_cum[k] as f64 / total_gt as f64;
                ap += (recall - prev_recall) * envelope[k];
                prev_recall = recall;
            }
            ap
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageAccuracy {
    pub accuracy: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub true_positive: usize,
    pub true_negative: usize,
    pub false_positive: usize,
    pub false_negative: usize,
}

/// `predicted[i]`: at least one fracture detection survived; `truth[i]`: fracture present.
pub fn image_accuracy(predicted: &[bool], truth: &[bool]) -> ImageAccuracy {
    assert_eq!(predicted.len(), truth.len(), "one prediction per image");
    let mut c = [0usize; 4];
    for (&p, &t) in predicted.iter().zip(truth) {
        c[usize::from(p) * 2 + usize::from(t)] += 1;
    }
    let [tn, fn_, fp, tp] = c;
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    ImageAccuracy {
        accuracy: ratio(tp + tn, predicted.len()).unwrap_or(0.0),
        sensitivity: ratio(tp, tp + fn_),
        specificity: ratio(tn, tn + fp),
        true_positive: tp,
        true_negative: tn,
        false_positive: fp,
        false_negative: fn_,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub interpolation: Interpolation,
    /// Minimum fracture certainty for an image to count as predicted positive.
    pub score_threshold: f64,
    /// Detections below this certainty are not ranked for AP.
    pub ap_score_floor: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            interpolation: Interpolation::Voc2007ElevenPoint,
            score_threshold: 0.5,
            ap_score_floor: 0.01,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(format!("iou_threshold {} outside (0, 1)", self.iou_threshold));
        }
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return Err(format!("score_threshold {} outside [0, 1]", self.score_threshold));
        }
        if !(0.0..=1.0).contains(&self.ap_score_floor) || self.ap_score_floor > self.score_threshold {
            return Err(format!("ap_score_floor {} outside [0, score_threshold]", self.ap_score_floor));
        }
        Ok(())
    }
}

/// Detections and ground truth of one test image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageResult {
    pub id: String,
    pub kind: SampleKind,
    pub detections: Vec<Detection>,
    pub ground_truth: Vec<Annotation>,
}

impl ImageResult {
    pub fn max_fracture_certainty(&self) -> f64 {
        self.detections.iter().filter(|d| d.class == Label::Fracture).map(|d| d.certainty).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub images: usize,
    /// Box-level AP per detectable class.
    pub ap: BTreeMap<String, Option<f64>>,
    /// Mean of the box-level APs that are defined.
    pub map: Option<f64>,
    /// Image-level AP of `hand_no_fracture`, ranking images by `1 - max fracture certainty`.
    pub ap_hand_no_fracture_image: Option<f64>,
    /// Mean of the fracture box AP and the hand image AP.
    pub map_two_label: Option<f64>,
    pub accuracy: ImageAccuracy,
    /// Number of images with a given count of reported detections.
    pub detections_per_image: BTreeMap<usize, usize>,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn evaluate(results: &[ImageResult], cfg: &EvalConfig) -> EvalReport {
    let mut pooled = Vec::new();
    let mut total_gt = 0;
    for r in results {
        let m = match_detections(&r.detections, &r.ground_truth, Label::Fracture, cfg.iou_threshold);
        total_gt += m.num_gt;
        pooled.extend(m.matches);
    }
    let fracture_ap = average_precision(&pooled, total_gt, cfg.interpolation);
    let mut ap = BTreeMap::new();
    ap.insert(Label::Fracture.as_str().to_string(), fracture_ap);
    let map = mean_defined(ap.values().copied());

    let hand_matches: Vec<DetectionMatch> = results
        .iter()
        .map(|r| DetectionMatch {
            certainty: 1.0 - r.max_fracture_certainty(),
            true_positive: r.kind == SampleKind::HandNegative,
        })
        .collect();
    let hand_total = results.iter().filter(|r| r.kind == SampleKind::HandNegative).count();
    let hand_ap = average_precision(&hand_matches, hand_total, cfg.interpolation);

    let predicted: Vec<bool> = results.iter().map(|r| r.max_fracture_certainty() >= cfg.score_threshold).collect();
    let truth: Vec<bool> = results.iter().map(|r| r.kind == SampleKind::Positive).collect();

    let mut hist = BTreeMap::new();
    for r in results {
        *hist.entry(r.detections.len()).or_insert(0) += 1;
    }
    EvalReport {
        config: *cfg,
        images: results.len(),
        ap,
        map,
        ap_hand_no_fracture_image: hand_ap,
        map_two_label: mean_defined([fracture_ap, hand_ap].into_iter()),
        accuracy: image_accuracy(&predicted, &truth),
        detections_per_image: hist,
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `section,name,value` rows: one per class, then the summary metrics.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("section,name,value\n");
        for (class, ap) in &self.ap {
            let _ = writeln!(s, "class,{class},{}", fmt_opt(*ap));
        }
        let a = &self.accuracy;
        for (name, v) in [
            ("map", self.map),
            ("ap_hand_no_fracture_image", self.ap_hand_no_fracture_image),
            ("map_two_label", self.map_two_label),
            ("accuracy", Some(a.accuracy)),
            ("sensitivity", a.sensitivity),
            ("specificity", a.specificity),
        ] {
            let _ = writeln!(s, "summary,{name},{}", fmt_opt(v));
        }
        s
    }
}

pub fn emit_report(report: &EvalReport, path: &Path, format: ReportFormat) -> Result<(), EvalError> {
    let body = match format {
        ReportFormat::Json => report.to_json() + "\n",
        ReportFormat::Csv => report.to_csv(),
    };
    std::fs::write(path, body).map_err(|source| EvalError::Io { path: path.into(), source })
}

pub fn read_report(path: &Path) -> Result<EvalReport, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io { path: path.into(), source })?;
    serde_json::from_str(&text).map_err(|e| EvalError::Parse { path: path.into(), message: e.to_string() })
}
