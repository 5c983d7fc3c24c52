//! Joint RPN + detection-head training by per-image SGD.

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::detector::{image_tensor, DetectorConfig};
use super::{BackboneTrace, FeatureMap, HeadTrace, NetError, NetworkParams, Real, RpnTrace, Tensor};
use crate::anchors::{assign_anchors, generate_anchors, sample_minibatch, AnchorError, AnchorLabel};
use crate::dataset::{Label, Sample};
use crate::geometry::{encode_delta, iou, BBox, BoxDelta};
use crate::loss::{smooth_l1, smooth_l1_grad, softmax_cross_entropy, LossReport};
use crate::proposals::select_proposals;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Anchor(#[from] AnchorError),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("training set has no fracture boxes; nothing to regress")]
    NoPositives,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("epoch {epoch}, sample {sample}: {source}")]
    Step { epoch: usize, sample: String, source: Box<TrainError> },
}

/// Loss constants of both stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Weight of the RPN regression term.
    pub lambda: f64,
    /// Sampled anchors per image (the classification normalizer).
    pub rpn_batch: usize,
    pub rpn_pos_fraction: f64,
    /// Weight of the detection-head regression term.
    pub det_lambda: f64,
    /// Sampled regions per image for the detection head.
    pub det_batch: usize,
    pub det_pos_fraction: f64,
    /// Regions with IoU at least this against a fracture box are foreground.
    pub det_fg_iou: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 10.0,
            rpn_batch: 256,
            rpn_pos_fraction: 0.5,
            det_lambda: 1.0,
            det_batch: 32,
            det_pos_fraction: 0.25,
            det_fg_iou: 0.5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.lambda >= 0.0 && self.det_lambda >= 0.0) {
            return Err("loss weights must be nonnegative".into());
        }
        if self.rpn_batch < 2 || self.det_batch < 2 {
            return Err("batch sizes must be at least 2".into());
        }
        for (name, v) in [("rpn_pos_fraction", self.rpn_pos_fraction), ("det_pos_fraction", self.det_pos_fraction)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(format!("{name} = {v} outside (0, 1)"));
            }
        }
        if !(self.det_fg_iou > 0.0 && self.det_fg_iou <= 1.0) {
            return Err(format!("det_fg_iou = {} outside (0, 1]", self.det_fg_iou));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Rescales the full gradient to at most this L2 norm.
    pub clip_grad_norm: Option<f64>,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 45,
            learning_rate: 0.001,
            momentum: 0.9,
            weight_decay: 0.0,
            clip_grad_norm: None,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.epochs == 0 {
            return Err("epochs must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(format!("learning_rate = {} invalid", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(format!("momentum = {} outside [0, 1)", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(format!("weight_decay = {} negative", self.weight_decay));
        }
        if let Some(c) = self.clip_grad_norm {
            if !(c > 0.0) {
                return Err(format!("clip_grad_norm = {c} must be positive"));
            }
        }
        self.loss.validate()
    }
}

/// A region fed to the detection head with its training target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiTarget {
    pub bbox: BBox,
    /// 0 is background.
    pub class: usize,
    /// Regression target, present on foreground regions.
    pub delta: Option<BoxDelta>,
}

/// The stochastic choices of one training pass. Fixing them makes the loss a
/// deterministic function of the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampling {
    pub anchors: Vec<usize>,
    pub rois: Vec<RoiTarget>,
}

#[derive(Debug, Clone, Copy)]
pub enum SamplingMode<'a> {
    Random(u64),
    Fixed(&'a Sampling),
}

/// Loss of one pass, split by stage.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepLoss {
    pub total: f64,
    pub rpn: LossReport,
    pub det: LossReport,
}

impl StepLoss {
    fn add(&self, o: &StepLoss) -> StepLoss {
        StepLoss { total: self.total + o.total, rpn: self.rpn.add(&o.rpn), det: self.det.add(&o.det) }
    }

    fn scaled(&self, f: f64) -> StepLoss {
        StepLoss { total: self.total * f, rpn: self.rpn.scaled(f), det: self.det.scaled(f) }
    }
}

/// Recorded forward pass with loss gradients at the network outputs.
pub struct TrainingPass<T> {
    pub loss: StepLoss,
    pub sampling: Sampling,
    features: FeatureMap<T>,
    backbone: BackboneTrace<T>,
    rpn: RpnTrace<T>,
    head: Option<HeadTrace<T>>,
    d_rpn_logits: Vec<[T; 2]>,
    d_rpn_deltas: Vec<[T; 4]>,
    d_head_logits: Vec<T>,
    d_head_deltas: Vec<T>,
}

impl<T: Real> TrainingPass<T> {
    /// Accumulates parameter gradients of `loss.total`.
    pub fn backward(&self, params: &mut NetworkParams<T>) {
        let mut d_features = vec![T::zero(); self.features.data.len()];
        params.rpn_backward(&self.rpn, &self.features, &self.d_rpn_logits, &self.d_rpn_deltas, &mut d_features);
        if let Some(head) = &self.head {
            params.detect_backward(head, &self.d_head_logits, &self.d_head_deltas, &mut d_features);
        }
        params.backbone_backward(&self.backbone, &d_features);
    }
}

/// Picks up to `cfg.det_batch` regions from `candidates`: foreground
/// (IoU >= `det_fg_iou` with a fracture box) capped at the positive quota,
/// background filling the rest.
pub fn sample_rois(candidates: &[BBox], gt: &[BBox], cfg: &LossConfig, seed: u64) -> Vec<RoiTarget> {
    let mut fg = Vec::new();
    let mut bg = Vec::new();
    for c in candidates {
        let best =
            gt.iter().enumerate().map(|(j, g)| (iou(c, g), j)).fold((0.0, 0), |a, b| if b.0 > a.0 { b } else { a });
        if !gt.is_empty() && best.0 >= cfg.det_fg_iou {
            if let Ok(delta) = encode_delta(c, &gt[best.1]) {
                fg.push(RoiTarget { bbox: *c, class: Label::Fracture.class_index(), delta: Some(delta) });
            }
        } else if c.area() > 0.0 {
            bg.push(RoiTarget { bbox: *c, class: 0, delta: None });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let quota = (cfg.det_batch as f64 * cfg.det_pos_fraction).floor() as usize;
    let n_fg = fg.len().min(quota);
    let n_bg = bg.len().min(cfg.det_batch - n_fg);
    let mut pick = |pool: &[RoiTarget], amount: usize| {
        let mut idx = index::sample(&mut rng, pool.len(), amount).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|k| pool[k]).collect::<Vec<_>>()
    };
    let mut out = pick(&fg, n_fg);
    out.extend(pick(&bg, n_bg));
    out
}

/// Forward pass of both stages on one image with the multitask losses and
/// their output gradients. `gt` holds the image's fracture boxes.
pub fn forward_loss<T: Real>(
    params: &NetworkParams<T>,
    det: &DetectorConfig,
    loss_cfg: &LossConfig,
    image: &Tensor<T>,
    gt: &[BBox],
    mode: SamplingMode<'_>,
) -> Result<TrainingPass<T>, TrainError> {
    let (h, w) = (image.shape()[1] as f64, image.shape()[2] as f64);
    let (features, backbone) = params.backbone_forward(image)?;
    let (rpn_out, rpn_trace) = params.rpn_forward(&features)?;
    let anchors = generate_anchors(features.width, features.height, &det.anchors);
    let assignment = assign_anchors(&anchors, gt, det.assign, w, h)?;

    let sampling = match mode {
        SamplingMode::Fixed(s) => s.clone(),
        SamplingMode::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let anchor_idx = sample_minibatch(&assignment, loss_cfg.rpn_batch, loss_cfg.rpn_pos_fraction, rng.gen())?;
            let mut candidates: Vec<BBox> =
                select_proposals(&rpn_out, &anchors, w, h, &det.proposals).into_iter().map(|s| s.bbox).collect();
            candidates.extend_from_slice(gt);
            Sampling { anchors: anchor_idx, rois: sample_rois(&candidates, gt, loss_cfg, rng.gen()) }
        }
    };

    // RPN: cross-entropy over (background, object) plus smooth L1 on positives
    let n_anchors = rpn_out.len();
    let mut d_rpn_logits = vec![[T::zero(); 2]; n_anchors];
    let mut d_rpn_deltas = vec![[T::zero(); 4]; n_anchors];
    let n_rpn = sampling.anchors.len().max(1) as f64;
    let (mut rpn_cls, mut rpn_reg) = (0.0, 0.0);
    for &i in &sampling.anchors {
        let positive = assignment.labels[i] == AnchorLabel::Positive;
        let logits = [rpn_out.logits[i][0].as_f64(), rpn_out.logits[i][1].as_f64()];
        let (l, g) = softmax_cross_entropy(&logits, usize::from(positive));
        rpn_cls += l;
        d_rpn_logits[i] = [T::from_f64(g[0] / n_rpn), T::from_f64(g[1] / n_rpn)];
        if let (true, Some(target)) = (positive, assignment.target_delta[i]) {
            let t = target.as_array();
            for k in 0..4 {
                let diff = rpn_out.deltas[i][k].as_f64() - t[k];
                rpn_reg += smooth_l1(diff);
                d_rpn_deltas[i][k] = T::from_f64(loss_cfg.lambda / n_rpn * smooth_l1_grad(diff));
            }
        }
    }
    let rpn = LossReport::from_terms(rpn_cls / n_rpn, rpn_reg / n_rpn, loss_cfg.lambda);

    // detection head over the sampled regions
    let (mut det_loss, mut head_trace) = (LossReport::default(), None);
    let (mut d_head_logits, mut d_head_deltas) = (Vec::new(), Vec::new());
    if !sampling.rois.is_empty() {
        let boxes: Vec<BBox> = sampling.rois.iter().map(|r| r.bbox).collect();
        let (head, trace) = params.detect_forward(&features, &boxes)?;
        let k = head.num_classes;
        let n = boxes.len() as f64;
        d_head_logits = vec![T::zero(); head.logits.len()];
        d_head_deltas = vec![T::zero(); head.deltas.len()];
        let (mut cls, mut reg) = (0.0, 0.0);
        for (r, roi) in sampling.rois.iter().enumerate() {
            let row: Vec<f64> = head.logits[r * k..(r + 1) * k].iter().map(|v| v.as_f64()).collect();
            let (l, g) = softmax_cross_entropy(&row, roi.class);
            cls += l;
            for c in 0..k {
                d_head_logits[r * k + c] = T::from_f64(g[c] / n);
            }
            if let Some(target) = roi.delta {
                let t = target.as_array();
                let base = (r * k + roi.class) * 4;
                for j in 0..4 {
                    let diff = head.deltas[base + j].as_f64() - t[j];
                    reg += smooth_l1(diff);
                    d_head_deltas[base + j] = T::from_f64(loss_cfg.det_lambda / n * smooth_l1_grad(diff));
                }
            }
        }
        det_loss = LossReport::from_terms(cls / n, reg / n, loss_cfg.det_lambda);
        head_trace = Some(trace);
    }

    Ok(TrainingPass {
        loss: StepLoss { total: rpn.total + det_loss.total, rpn, det: det_loss },
        sampling,
        features,
        backbone,
        rpn: rpn_trace,
        head: head_trace,
        d_rpn_logits,
        d_rpn_deltas,
        d_head_logits,
        d_head_deltas,
    })
}

/// SGD with classical momentum: `v <- mu * v + g + wd * p`, `p <- p - lr * v`.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub clip_grad_norm: Option<f64>,
    velocity: Vec<Vec<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(params: &NetworkParams<T>, learning_rate: f64, momentum: f64) -> Self {
        let velocity = params.named_tensors().iter().map(|(_, t)| vec![T::zero(); t.len()]).collect();
        Self { learning_rate, momentum, weight_decay: 0.0, clip_grad_norm: None, velocity }
    }

    pub fn from_config(params: &NetworkParams<T>, cfg: &TrainConfig) -> Self {
        let mut s = Self::new(params, cfg.learning_rate, cfg.momentum);
        s.weight_decay = cfg.weight_decay;
        s.clip_grad_norm = cfg.clip_grad_norm;
        s
    }

    /// Applies accumulated gradients and clears them. A non-finite gradient
    /// leaves the parameters untouched and names the offending tensor.
    pub fn step(&mut self, params: &mut NetworkParams<T>) -> Result<(), NetError> {
        let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
        let mut sq_norm = 0.0;
        for (name, t) in names.iter().zip(params.tensors_mut()) {
            let g = t.grad_mut();
            let mut max_abs = 0.0f64;
            let mut finite = true;
            for v in g.iter() {
                let x = v.as_f64();
                finite &= x.is_finite();
                max_abs = max_abs.max(x.abs());
                sq_norm += x * x;
            }
            if !finite {
                return Err(NetError::NonFiniteGradient { layer: name.clone(), max_abs });
            }
        }
        let scale = match self.clip_grad_norm {
            Some(c) if sq_norm.sqrt() > c => c / sq_norm.sqrt(),
            _ => 1.0,
        };
        let (lr, mu, wd) =
            (T::from_f64(self.learning_rate), T::from_f64(self.momentum), T::from_f64(self.weight_decay));
        let scale = T::from_f64(scale);
        for (t, v) in params.tensors_mut().into_iter().zip(self.velocity.iter_mut()) {
            let (data, grad) = t.data_and_grad_mut();
            for ((p, g), vel) in data.iter_mut().zip(grad.iter_mut()).zip(v.iter_mut()) {
                *vel = mu * *vel + scale * *g + wd * *p;
                *p = *p - lr * *vel;
                *g = T::zero();
            }
        }
        Ok(())
    }
}

/// Runs one pass and applies its gradient.
pub fn backward_and_step<T: Real>(
    pass: &TrainingPass<T>,
    params: &mut NetworkParams<T>,
    opt: &mut Sgd<T>,
) -> Result<(), NetError> {
    pass.backward(params);
    opt.step(params)
}

/// Mean per-image losses of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub images: usize,
    pub loss: StepLoss,
}

pub struct TrainOutcome<T> {
    pub params: NetworkParams<T>,
    pub history: Vec<EpochRecord>,
}

pub fn train<T: Real>(
    samples: &[Sample],
    det: &DetectorConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome<T>, TrainError> {
    train_with_progress(samples, det, cfg, seed, |_| {})
}

/// Deterministic per seed: the seed fixes initialization, visiting order and
/// every sampling draw. `on_epoch` sees each record as it is produced.
pub fn train_with_progress<T: Real>(
    samples: &[Sample],
    det: &DetectorConfig,
    cfg: &TrainConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>, TrainError> {
    det.validate()?;
    cfg.validate().map_err(TrainError::Config)?;
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if samples.iter().all(|s| s.fracture_boxes().is_empty()) {
        return Err(TrainError::NoPositives);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = NetworkParams::<T>::init(&det.arch, rng.gen())?;
    let mut opt = Sgd::from_config(&params, cfg);
    let inputs: Vec<(Tensor<T>, Vec<BBox>)> =
        samples.iter().map(|s| (image_tensor(&s.image), s.fracture_boxes())).collect();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = StepLoss::default();
        for &i in &order {
            let (image, gt) = &inputs[i];
            let wrap = |e: TrainError| TrainError::Step { epoch, sample: samples[i].id.clone(), source: Box::new(e) };
            let pass =
                forward_loss(&params, det, &cfg.loss, image, gt, SamplingMode::Random(rng.gen())).map_err(wrap)?;
            backward_and_step(&pass, &mut params, &mut opt).map_err(|e| wrap(e.into()))?;
            sum = sum.add(&pass.loss);
        }
        let record = EpochRecord { epoch, images: order.len(), loss: sum.scaled(1.0 / order.len() as f64) };
        on_epoch(&record);
        history.push(record);
    }
    Ok(TrainOutcome { params, history })
}
