//! Backbone, region-proposal head and detection head with explicit
//! reverse-mode passes. Forward passes return traces; backward passes consume
//! them and accumulate into parameter gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::{
    col2im, conv_backward, conv_forward, im2col, linear_backward, linear_forward, maxpool2_backward, maxpool2_forward,
    relu_backward_inplace, relu_inplace, roi_pool_backward, roi_pool_forward,
};
use super::real::Real;
use super::tensor::Tensor;
use super::NetError;
use crate::geometry::BBox;

/// Layer sizes of the detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub in_channels: usize,
    /// Output channels of each 3x3 backbone convolution.
    pub backbone_channels: Vec<usize>,
    /// The first `pooled_layers` backbone layers are followed by 2x2 max
    /// pooling; total stride is `2^pooled_layers`.
    pub pooled_layers: usize,
    pub rpn_channels: usize,
    pub anchors_per_cell: usize,
    /// ROI pooling output is `roi_grid x roi_grid` per channel.
    pub roi_grid: usize,
    pub head_hidden: usize,
    /// Detection classes including background at index 0.
    pub num_classes: usize,
    /// Gaussian std of output layers (RPN scores/deltas, class scores, box deltas).
    pub init_std: f64,
    /// Gaussian std of trunk layers; `None` selects `sqrt(2 / fan_in)`.
    pub trunk_init_std: Option<f64>,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            backbone_channels: vec![16, 16, 32, 32],
            pooled_layers: 3,
            rpn_channels: 32,
            anchors_per_cell: 9,
            roi_grid: 4,
            head_hidden: 64,
            num_classes: 3,
            init_std: 0.01,
            trunk_init_std: None,
        }
    }
}

impl ArchConfig {
    pub fn stride(&self) -> usize {
        1 << self.pooled_layers
    }

    pub fn feature_channels(&self) -> usize {
        *self.backbone_channels.last().unwrap_or(&self.in_channels)
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: String| Err(NetError::Structure(m));
        if self.in_channels == 0 || self.backbone_channels.is_empty() {
            return bad("backbone needs input channels and at least one layer".into());
        }
        if self.backbone_channels.contains(&0) || self.rpn_channels == 0 || self.head_hidden == 0 {
            return bad("layer widths must be positive".into());
        }
        if self.pooled_layers > self.backbone_channels.len() {
            return bad(format!(
                "pooled_layers {} exceeds backbone depth {}",
                self.pooled_layers,
                self.backbone_channels.len()
            ));
        }
        if self.anchors_per_cell == 0 || self.roi_grid == 0 {
            return bad("anchors_per_cell and roi_grid must be positive".into());
        }
        if self.num_classes < 2 {
            return bad("num_classes must count background plus at least one class".into());
        }
        if !(self.init_std >= 0.0) || self.trunk_init_std.is_some_and(|s| !(s >= 0.0)) {
            return bad("init std must be nonnegative".into());
        }
        Ok(())
    }
}

/// Convolution weight `c_out x (c_in*k*k)` and bias `c_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub kernel: usize,
}

impl<T: Real> ConvLayer<T> {
    fn new(c_in: usize, c_out: usize, kernel: usize) -> Self {
        Self { weight: Tensor::zeros(&[c_out, c_in * kernel * kernel]), bias: Tensor::zeros(&[c_out]), kernel }
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn kdim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn c_in(&self) -> usize {
        self.kdim() / (self.kernel * self.kernel)
    }
}

/// Fully connected weight `d_out x d_in` and bias `d_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> LinearLayer<T> {
    fn new(d_in: usize, d_out: usize) -> Self {
        Self { weight: Tensor::zeros(&[d_out, d_in]), bias: Tensor::zeros(&[d_out]) }
    }

    pub fn d_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn d_out(&self) -> usize {
        self.weight.shape()[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    pub arch: ArchConfig,
    pub backbone: Vec<ConvLayer<T>>,
    pub rpn_conv: ConvLayer<T>,
    /// 1x1 convolution producing `anchors_per_cell * (2 + 4)` channels:
    /// per anchor, background and object scores then four deltas.
    pub rpn_out: ConvLayer<T>,
    pub head_fc: LinearLayer<T>,
    pub head_cls: LinearLayer<T>,
    /// Per-class box deltas, `num_classes * 4` outputs.
    pub head_bbox: LinearLayer<T>,
}

/// Output values per anchor in the RPN output map.
pub const RPN_VALUES_PER_ANCHOR: usize = 6;

impl<T: Real> NetworkParams<T> {
    /// Zero-filled parameters with the shapes implied by `arch`.
    pub fn zeros(arch: &ArchConfig) -> Result<Self, NetError> {
        arch.validate()?;
        let mut backbone = Vec::with_capacity(arch.backbone_channels.len());
        let mut c_in = arch.in_channels;
        for &c_out in &arch.backbone_channels {
            backbone.push(ConvLayer::new(c_in, c_out, 3));
            c_in = c_out;
        }
        let roi_dim = c_in * arch.roi_grid * arch.roi_grid;
        Ok(Self {
            arch: arch.clone(),
            backbone,
            rpn_conv: ConvLayer::new(c_in, arch.rpn_channels, 3),
            rpn_out: ConvLayer::new(arch.rpn_channels, arch.anchors_per_cell * RPN_VALUES_PER_ANCHOR, 1),
            head_fc: LinearLayer::new(roi_dim, arch.head_hidden),
            head_cls: LinearLayer::new(arch.head_hidden, arch.num_classes),
            head_bbox: LinearLayer::new(arch.head_hidden, arch.num_classes * 4),
        })
    }

    /// Gaussian weights, zero biases; bit-identical for a given seed.
    pub fn init(arch: &ArchConfig, seed: u64) -> Result<Self, NetError> {
        let mut params = Self::zeros(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trunk_std = |fan_in: usize| arch.trunk_init_std.unwrap_or((2.0 / fan_in as f64).sqrt());
        let fill = |t: &mut Tensor<T>, std: f64, rng: &mut ChaCha8Rng| -> Result<(), NetError> {
            let dist = Normal::new(0.0, std).map_err(|e| NetError::Structure(format!("bad init std {std}: {e}")))?;
            for v in t.data_mut() {
                *v = T::from_f64(dist.sample(rng));
            }
            Ok(())
        };
        for layer in params.backbone.iter_mut() {
            let std = trunk_std(layer.kdim());
            fill(&mut layer.weight, std, &mut rng)?;
        }
        let std = trunk_std(params.rpn_conv.kdim());
        fill(&mut params.rpn_conv.weight, std, &mut rng)?;
        fill(&mut params.rpn_out.weight, arch.init_std, &mut rng)?;
        let std = trunk_std(params.head_fc.d_in());
        fill(&mut params.head_fc.weight, std, &mut rng)?;
        fill(&mut params.head_cls.weight, arch.init_std, &mut rng)?;
        fill(&mut params.head_bbox.weight, arch.init_std, &mut rng)?;
        Ok(params)
    }

    pub fn stride(&self) -> usize {
        self.arch.stride()
    }

    /// Every parameter tensor with a stable name, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, l) in self.backbone.iter().enumerate() {
            out.push((format!("backbone.conv{i}.weight"), &l.weight));
            out.push((format!("backbone.conv{i}.bias"), &l.bias));
        }
        out.push(("rpn.conv.weight".into(), &self.rpn_conv.weight));
        out.push(("rpn.conv.bias".into(), &self.rpn_conv.bias));
        out.push(("rpn.out.weight".into(), &self.rpn_out.weight));
        out.push(("rpn.out.bias".into(), &self.rpn_out.bias));
        out.push(("head.fc.weight".into(), &self.head_fc.weight));
        out.push(("head.fc.bias".into(), &self.head_fc.bias));
        out.push(("head.cls.weight".into(), &self.head_cls.weight));
        out.push(("head.cls.bias".into(), &self.head_cls.bias));
        out.push(("head.bbox.weight".into(), &self.head_bbox.weight));
        out.push(("head.bbox.bias".into(), &self.head_bbox.bias));
        out
    }

    /// Mutable counterpart of [`NetworkParams::named_tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for l in self.backbone.iter_mut() {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.rpn_conv.weight);
        out.push(&mut self.rpn_conv.bias);
        out.push(&mut self.rpn_out.weight);
        out.push(&mut self.rpn_out.bias);
        out.push(&mut self.head_fc.weight);
        out.push(&mut self.head_fc.bias);
        out.push(&mut self.head_cls.weight);
        out.push(&mut self.head_cls.bias);
        out.push(&mut self.head_bbox.weight);
        out.push(&mut self.head_bbox.bias);
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.tensors_mut().into_iter().for_each(Tensor::zero_grad);
    }

    pub fn cast<U: Real>(&self) -> NetworkParams<U> {
        let conv = |l: &ConvLayer<T>| ConvLayer { weight: l.weight.cast(), bias: l.bias.cast(), kernel: l.kernel };
        let lin = |l: &LinearLayer<T>| LinearLayer { weight: l.weight.cast(), bias: l.bias.cast() };
        NetworkParams {
            arch: self.arch.clone(),
            backbone: self.backbone.iter().map(conv).collect(),
            rpn_conv: conv(&self.rpn_conv),
            rpn_out: conv(&self.rpn_out),
            head_fc: lin(&self.head_fc),
            head_cls: lin(&self.head_cls),
            head_bbox: lin(&self.head_bbox),
        }
    }
}

/// Channel-major feature map produced by the backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    pub data: Vec<T>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Input pixels per feature cell.
    pub stride: usize,
}

#[derive(Debug, Clone)]
struct ConvTrace<T> {
    col: Vec<T>,
    activation: Vec<T>,
    pool_idx: Option<Vec<u32>>,
    h: usize,
    w: usize,
}

#[derive(Debug, Clone)]
pub struct BackboneTrace<T> {
    layers: Vec<ConvTrace<T>>,
}

/// Per-anchor RPN outputs in anchor-generation order.
#[derive(Debug, Clone, PartialEq)]
pub struct RpnOutput<T> {
    /// `(background, object)` scores.
    pub logits: Vec<[T; 2]>,
    pub deltas: Vec<[T; 4]>,
}

impl<T: Real> RpnOutput<T> {
    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    /// Object probability: softmax over the score pair.
    pub fn objectness(&self, i: usize) -> f64 {
        let [bg, obj] = self.logits[i];
        let (bg, obj) = (bg.as_f64(), obj.as_f64());
        1.0 / (1.0 + (bg - obj).exp())
    }
}

#[derive(Debug, Clone)]
pub struct RpnTrace<T> {
    col_conv: Vec<T>,
    activation: Vec<T>,
}

/// Per-proposal detection-head outputs, row-major `n x num_classes` and
/// `n x (num_classes * 4)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput<T> {
    pub num_classes: usize,
    pub logits: Vec<T>,
    pub probs: Vec<f64>,
    pub deltas: Vec<T>,
}

impl<T: Real> HeadOutput<T> {
    pub fn len(&self) -> usize {
        self.probs.len() / self.num_classes
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs_row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.num_classes..(i + 1) * self.num_classes]
    }

    pub fn delta(&self, i: usize, class: usize) -> [f64; 4] {
        let base = (i * self.num_classes + class) * 4;
        std::array::from_fn(|k| self.deltas[base + k].as_f64())
    }

    /// Most probable class and its probability (the detection certainty).
    pub fn argmax(&self, i: usize) -> (usize, f64) {
        let row = self.probs_row(i);
        let mut best = (0, row[0]);
        for (k, &p) in row.iter().enumerate().skip(1) {
            if p > best.1 {
                best = (k, p);
            }
        }
        best
    }
}

#[derive(Debug, Clone)]
pub struct HeadTrace<T> {
    pooled: Vec<T>,
    pool_idx: Vec<u32>,
    hidden: Vec<T>,
    n: usize,
}

impl<T: Real> NetworkParams<T> {
    /// Runs the backbone on a `C x H x W` image. Spatial dims that are not a
    /// multiple of the stride are zero-padded at the bottom and right.
    pub fn backbone_forward(&self, image: &Tensor<T>) -> Result<(FeatureMap<T>, BackboneTrace<T>), NetError> {
        let shape = image.shape();
        if shape.len() != 3 || shape[0] != self.arch.in_channels || shape[1] == 0 || shape[2] == 0 {
            return Err(NetError::Shape(format!(
                "expected a {} x H x W image, got {:?}",
                self.arch.in_channels, shape
            )));
        }
        let stride = self.stride();
        let (c0, h0, w0) = (shape[0], shape[1], shape[2]);
        let (mut h, mut w) = (h0.div_ceil(stride) * stride, w0.div_ceil(stride) * stride);
        let mut x = if (h, w) == (h0, w0) {
            image.data().to_vec()
        } else {
            let mut padded = vec![T::zero(); c0 * h * w];
            for c in 0..c0 {
                for y in 0..h0 {
                    let src = &image.data()[(c * h0 + y) * w0..(c * h0 + y + 1) * w0];
                    padded[(c * h + y) * w..(c * h + y) * w + w0].copy_from_slice(src);
                }
            }
            padded
        };
        let mut c = c0;
        let mut layers = Vec::with_capacity(self.backbone.len());
        for (li, layer) in self.backbone.iter().enumerate() {
            let col = im2col(&x, c, h, w, layer.kernel);
            let mut act =
                conv_forward(layer.weight.data(), layer.bias.data(), &col, layer.c_out(), layer.kdim(), h * w);
            relu_inplace(&mut act);
            let (lh, lw) = (h, w);
            c = layer.c_out();
            let pool_idx = if li < self.arch.pooled_layers {
                let (pooled, idx) = maxpool2_forward(&act, c, h, w);
                x = pooled;
                h /= 2;
                w /= 2;
                Some(idx)
            } else {
                x = act.clone();
                None
            };
            layers.push(ConvTrace { col, activation: act, pool_idx, h: lh, w: lw });
        }
        let features = FeatureMap { data: x, channels: c, height: h, width: w, stride };
        Ok((features, BackboneTrace { layers }))
    }

    /// Accumulates backbone parameter gradients from `d_features`.
    pub fn backbone_backward(&mut self, trace: &BackboneTrace<T>, d_features: &[T]) {
        let mut grad = d_features.to_vec();
        for li in (0..self.backbone.len()).rev() {
            let t = &trace.layers[li];
            let layer = &mut self.backbone[li];
            let (c_out, hw) = (layer.c_out(), t.h * t.w);
            if let Some(idx) = &t.pool_idx {
                grad = maxpool2_backward(&grad, idx, c_out * hw);
            }
            relu_backward_inplace(&mut grad, &t.activation);
            let d_col = accumulate_conv(layer, &grad, &t.col, hw, li > 0);
            if let Some(d_col) = d_col {
                grad = col2im(&d_col, layer.c_in(), t.h, t.w, layer.kernel);
            }
        }
    }

    pub fn rpn_forward(&self, features: &FeatureMap<T>) -> Result<(RpnOutput<T>, RpnTrace<T>), NetError> {
        let (c, h, w) = (features.channels, features.height, features.width);
        if c != self.rpn_conv.c_in() {
            return Err(NetError::Structure(format!(
                "feature map has {c} channels, RPN expects {}",
                self.rpn_conv.c_in()
            )));
        }
        let a = self.arch.anchors_per_cell;
        if self.rpn_out.c_out() != a * RPN_VALUES_PER_ANCHOR {
            return Err(NetError::Structure(format!(
                "RPN output has {} channels, {} anchors per cell need {}",
                self.rpn_out.c_out(),
                a,
                a * RPN_VALUES_PER_ANCHOR
            )));
        }
        let hw = h * w;
        let col_conv = im2col(&features.data, c, h, w, 3);
        let mut act = conv_forward(
            self.rpn_conv.weight.data(),
            self.rpn_conv.bias.data(),
            &col_conv,
            self.rpn_conv.c_out(),
            self.rpn_conv.kdim(),
            hw,
        );
        relu_inplace(&mut act);
        let out = conv_forward(
            self.rpn_out.weight.data(),
            self.rpn_out.bias.data(),
            &act,
            self.rpn_out.c_out(),
            self.rpn_out.kdim(),
            hw,
        );
        let mut logits = Vec::with_capacity(hw * a);
        let mut deltas = Vec::with_capacity(hw * a);
        for cell in 0..hw {
            for k in 0..a {
                let ch = |j: usize| out[(k * RPN_VALUES_PER_ANCHOR + j) * hw + cell];
                logits.push([ch(0), ch(1)]);
                deltas.push([ch(2), ch(3), ch(4), ch(5)]);
            }
        }
        Ok((RpnOutput { logits, deltas }, RpnTrace { col_conv, activation: act }))
    }

    /// Accumulates RPN parameter gradients and adds `dL/dfeatures` into `d_features`.
    pub fn rpn_backward(
        &mut self,
        trace: &RpnTrace<T>,
        features: &FeatureMap<T>,
        d_logits: &[[T; 2]],
        d_deltas: &[[T; 4]],
        d_features: &mut [T],
    ) {
        let (h, w) = (features.height, features.width);
        let hw = h * w;
        let a = self.arch.anchors_per_cell;
        let mut d_out = vec![T::zero(); a * RPN_VALUES_PER_ANCHOR * hw];
        for cell in 0..hw {
            for k in 0..a {
                let i = cell * a + k;
                let mut put = |j: usize, v: T| d_out[(k * RPN_VALUES_PER_ANCHOR + j) * hw + cell] = v;
                put(0, d_logits[i][0]);
                put(1, d_logits[i][1]);
                for (j, &v) in d_deltas[i].iter().enumerate() {
                    put(2 + j, v);
                }
            }
        }
        let mut d_act = accumulate_conv(&mut self.rpn_out, &d_out, &trace.activation, hw, true).expect("input grad");
        relu_backward_inplace(&mut d_act, &trace.activation);
        let d_col = accumulate_conv(&mut self.rpn_conv, &d_act, &trace.col_conv, hw, true).expect("input grad");
        let d_feat = col2im(&d_col, features.channels, h, w, 3);
        for (d, g) in d_features.iter_mut().zip(d_feat) {
            *d = *d + g;
        }
    }

    /// Scores and refines each proposal (image-pixel boxes).
    pub fn detect_forward(
        &self,
        features: &FeatureMap<T>,
        proposals: &[BBox],
    ) -> Result<(HeadOutput<T>, HeadTrace<T>), NetError> {
        let g = self.arch.roi_grid;
        let d = features.channels * g * g;
        if d != self.head_fc.d_in() {
            return Err(NetError::Structure(format!(
                "pooled dimension {d} does not match head input {}",
                self.head_fc.d_in()
            )));
        }
        let n = proposals.len();
        let mut pooled = Vec::with_capacity(n * d);
        let mut pool_idx = Vec::with_capacity(n * d);
        let s = features.stride as f64;
        for b in proposals {
            let region = [b.x1 / s, b.y1 / s, b.x2 / s, b.y2 / s];
            let (v, idx) =
                roi_pool_forward(&features.data, features.channels, features.height, features.width, region, g)?;
            pooled.extend(v);
            pool_idx.extend(idx);
        }
        let hdim = self.head_fc.d_out();
        let mut hidden = linear_forward(&pooled, self.head_fc.weight.data(), self.head_fc.bias.data(), n, d, hdim);
        relu_inplace(&mut hidden);
        let k = self.arch.num_classes;
        let logits = linear_forward(&hidden, self.head_cls.weight.data(), self.head_cls.bias.data(), n, hdim, k);
        let deltas = linear_forward(&hidden, self.head_bbox.weight.data(), self.head_bbox.bias.data(), n, hdim, 4 * k);
        let probs = logits
            .chunks_exact(k.max(1))
            .flat_map(|row| crate::loss::softmax(&row.iter().map(|v| v.as_f64()).collect::<Vec<_>>()))
            .collect();
        Ok((HeadOutput { num_classes: k, logits, probs, deltas }, HeadTrace { pooled, pool_idx, hidden, n }))
    }

    /// Accumulates head parameter gradients and adds the pooled-feature
    /// gradient into `d_features`.
    pub fn detect_backward(&mut self, trace: &HeadTrace<T>, d_logits: &[T], d_deltas: &[T], d_features: &mut [T]) {
        let n = trace.n;
        if n == 0 {
            return;
        }
        let hdim = self.head_fc.d_out();
        let k = self.arch.num_classes;
        let d_in = self.head_fc.d_in();
        let mut d_hidden = accumulate_linear(&mut self.head_cls, d_logits, &trace.hidden, n, hdim, k);
        let d_hidden_bbox = accumulate_linear(&mut self.head_bbox, d_deltas, &trace.hidden, n, hdim, 4 * k);
        for (a, b) in d_hidden.iter_mut().zip(d_hidden_bbox) {
            *a = *a + b;
        }
        relu_backward_inplace(&mut d_hidden, &trace.hidden);
        let d_pooled = accumulate_linear(&mut self.head_fc, &d_hidden, &trace.pooled, n, d_in, hdim);
        roi_pool_backward(&d_pooled, &trace.pool_idx, d_features);
    }
}

fn accumulate_conv<T: Real>(
    layer: &mut ConvLayer<T>,
    d_out: &[T],
    col: &[T],
    hw: usize,
    need_input: bool,
) -> Option<Vec<T>> {
    let (c_out, kdim) = (layer.c_out(), layer.kdim());
    let weight = layer.weight.data().to_vec();
    let mut d_bias = layer.bias.grad_mut().to_vec();
    let out = conv_backward(d_out, col, &weight, layer.weight.grad_mut(), &mut d_bias, c_out, kdim, hw, need_input);
    layer.bias.grad_mut().copy_from_slice(&d_bias);
    out
}

fn accumulate_linear<T: Real>(
    layer: &mut LinearLayer<T>,
    d_y: &[T],
    x: &[T],
    n: usize,
    d_in: usize,
    d_out: usize,
) -> Vec<T> {
    let weight = layer.weight.data().to_vec();
    let mut d_bias = layer.bias.grad_mut().to_vec();
    let d_x = linear_backward(d_y, x, &weight, layer.weight.grad_mut(), &mut d_bias, n, d_in, d_out);
    layer.bias.grad_mut().copy_from_slice(&d_bias);
    d_x
}
