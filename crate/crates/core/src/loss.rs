//! Multi-task detection loss: log loss on objectness plus smooth-L1 box
//! regression gated by the positive indicator, with analytic gradients.
//!
//! ```text
//! L = 1/N_cls * sum_i L_cls(p_i, p*_i) + lambda * 1/N_reg * sum_i p*_i * R(t_i - t*_i)
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BoxDelta;

/// Probabilities are clamped into `[PROB_EPS, 1 - PROB_EPS]` before the log.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("misaligned loss inputs: {0}")]
    Misaligned(String),
    #[error("invalid loss inputs: {0}")]
    Invalid(String),
}

pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

pub fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

/// Smooth-L1 summed over the four delta components of `t - t_star`.
pub fn smooth_l1_box(t: &BoxDelta, t_star: &BoxDelta) -> f64 {
    t.as_array().iter().zip(t_star.as_array()).map(|(a, b)| smooth_l1(a - b)).sum()
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Two-class log loss: `-ln p` for a positive, `-ln(1 - p)` for a negative.
pub fn cls_log_loss(p: f64, positive: bool) -> f64 {
    let p = clamp_prob(p);
    if positive {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Per-anchor inputs of the multi-task loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LossInputs {
    /// Predicted object probability per anchor.
    pub p: Vec<f64>,
    /// Ground-truth indicator per anchor.
    pub p_star: Vec<bool>,
    /// Predicted deltas per anchor.
    pub t: Vec<BoxDelta>,
    /// Target deltas, present exactly where `p_star` is set.
    pub t_star: Vec<Option<BoxDelta>>,
    pub n_cls: f64,
    pub n_reg: f64,
    pub lambda: f64,
}

impl LossInputs {
    pub fn validate(&self) -> Result<(), LossError> {
        let n = self.p.len();
        if self.p_star.len() != n || self.t.len() != n || self.t_star.len() != n {
            return Err(LossError::Misaligned(format!(
                "p: {}, p_star: {}, t: {}, t_star: {}",
                n,
                self.p_star.len(),
                self.t.len(),
                self.t_star.len()
            )));
        }
        if let Some(i) = (0..n).find(|&i| self.p_star[i] != self.t_star[i].is_some()) {
            return Err(LossError::Misaligned(format!(
                "anchor {i}: target delta must be present exactly on positives"
            )));
        }
        if !(self.n_cls >= 1.0 && self.n_reg >= 1.0) {
            return Err(LossError::Invalid(format!(
                "normalizers must be >= 1 (n_cls = {}, n_reg = {})",
                self.n_cls, self.n_reg
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(LossError::Invalid(format!("lambda {} must be >= 0", self.lambda)));
        }
        Ok(())
    }
}

/// Loss terms. `total = cls_term + lambda * reg_term`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub cls_term: f64,
    pub reg_term: f64,
}

impl LossReport {
    pub fn from_terms(cls_term: f64, reg_term: f64, lambda: f64) -> Self {
        Self { total: cls_term + lambda * reg_term, cls_term, reg_term }
    }

    /// Field-wise sum; used to accumulate per-image reports.
    pub fn add(&self, other: &LossReport) -> LossReport {
        LossReport {
            total: self.total + other.total,
            cls_term: self.cls_term + other.cls_term,
            reg_term: self.reg_term + other.reg_term,
        }
    }

    pub fn scaled(&self, factor: f64) -> LossReport {
        LossReport { total: self.total * factor, cls_term: self.cls_term * factor, reg_term: self.reg_term * factor }
    }
}

pub fn multitask_loss(inputs: &LossInputs) -> Result<LossReport, LossError> {
    inputs.validate()?;
    let cls: f64 = inputs.p.iter().zip(&inputs.p_star).map(|(&p, &s)| cls_log_loss(p, s)).sum();
    let reg: f64 =
        inputs.t.iter().zip(&inputs.t_star).filter_map(|(t, ts)| ts.as_ref().map(|ts| smooth_l1_box(t, ts))).sum();
    Ok(LossReport::from_terms(cls / inputs.n_cls, reg / inputs.n_reg, inputs.lambda))
}

/// Gradients of the total loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub d_p: Vec<f64>,
    pub d_t: Vec<[f64; 4]>,
}

pub fn multitask_loss_grad(inputs: &LossInputs) -> Result<LossGrad, LossError> {
    inputs.validate()?;
    let d_p = inputs
        .p
        .iter()
        .zip(&inputs.p_star)
        .map(|(&p, &s)| {
            let p = clamp_prob(p);
            let g = if s { -1.0 / p } else { 1.0 / (1.0 - p) };
            g / inputs.n_cls
        })
        .collect();
    let scale = inputs.lambda / inputs.n_reg;
    let d_t = inputs
        .t
        .iter()
        .zip(&inputs.t_star)
        .map(|(t, ts)| match ts {
            Some(ts) => {
                let (a, b) = (t.as_array(), ts.as_array());
                std::array::from_fn(|k| scale * smooth_l1_grad(a[k] - b[k]))
            }
            None => [0.0; 4],
        })
        .collect();
    Ok(LossGrad { d_p, d_t })
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy `-ln softmax(logits)[target]` and its gradient with respect
/// to the logits. With two logits `(background, object)` this is the
/// objectness log loss evaluated through the softmax.
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln() + max;
    let loss = log_sum - logits[target];
    let grad =
        logits.iter().enumerate().map(|(k, &z)| (z - log_sum).exp() - if k == target { 1.0 } else { 0.0 }).collect();
    (loss, grad)
}
