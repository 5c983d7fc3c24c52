//! Central finite-difference check of full-network gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::detector::DetectorConfig;
use super::train::{forward_loss, LossConfig, SamplingMode, TrainError};
use super::{NetworkParams, Tensor};
use crate::geometry::BBox;

/// Both gradients at or below this magnitude count as agreeing.
pub const ZERO_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckEntry {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_error: f64,
}

/// Adds `N(0, std^2)` noise to every bias. Zero biases put units with
/// all-zero inputs exactly on a ReLU kink, where central differences
/// average the two one-sided slopes.
pub fn jitter_biases(params: &mut NetworkParams<f64>, std: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    for (name, t) in names.iter().zip(params.tensors_mut()) {
        if name.ends_with(".bias") {
            for v in t.data_mut() {
                *v += std * rng.sample::<f64, _>(rand_distr::StandardNormal);
            }
        }
    }
}

/// `|a - n| / max(|a|, |n|)`, zero when both are below [`ZERO_TOLERANCE`].
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale <= ZERO_TOLERANCE {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Compares analytic gradients of the total training loss with central
/// differences of step `eps` on `count` parameters drawn uniformly from the
/// whole network. Sampling is drawn once and held fixed.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check(
    params: &NetworkParams<f64>,
    det: &DetectorConfig,
    loss: &LossConfig,
    image: &Tensor<f64>,
    gt: &[BBox],
    count: usize,
    eps: f64,
    seed: u64,
) -> Result<GradCheckReport, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pass = forward_loss(params, det, loss, image, gt, SamplingMode::Random(rng.gen()))?;
    let sampling = pass.sampling.clone();
    let mut grads = params.clone();
    grads.zero_grad();
    pass.backward(&mut grads);

    let named = grads.named_tensors();
    let sizes: Vec<usize> = named.iter().map(|(_, t)| t.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let mut flat = rng.gen_range(0..total);
        let mut ti = 0;
        while flat >= sizes[ti] {
            flat -= sizes[ti];
            ti += 1;
        }
        let analytic = named[ti].1.grad().map_or(0.0, |g| g[flat]);
        let eval = |delta: f64| -> Result<f64, TrainError> {
            let mut p = params.clone();
            p.tensors_mut()[ti].data_mut()[flat] += delta;
            Ok(forward_loss(&p, det, loss, image, gt, SamplingMode::Fixed(&sampling))?.loss.total)
        };
        let numeric = (eval(eps)? - eval(-eps)?) / (2.0 * eps);
        entries.push(GradCheckEntry {
            tensor: named[ti].0.clone(),
            index: flat,
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric),
        });
    }
    let max_rel_error = entries.iter().map(|e| e.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport { entries, max_rel_error })
}
