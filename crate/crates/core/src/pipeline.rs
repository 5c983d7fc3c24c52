//! In-memory experiment: split, augment the training originals, train,
//! detect on the held-out originals and evaluate.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::augment::{expand_dataset, AugmentError, AugmentPlan};
use crate::config::PipelineConfig;
use crate::dataset::{
    resize_sample, split_dataset, synth_generate, DatasetError, DatasetManifest, Sample, SampleRecord, Split,
};
use crate::eval::{evaluate, EvalReport, ImageResult};
use crate::nn::{detect, EpochRecord, NetError, NetworkParams, TrainError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Net(#[from] NetError),
}

/// Independent seeds for each stage, all derived from the experiment seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSeeds {
    pub synth: u64,
    pub split: u64,
    pub augment: u64,
    pub train: u64,
}

impl StageSeeds {
    pub fn derive(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self { synth: rng.gen(), split: rng.gen(), augment: rng.gen(), train: rng.gen() }
    }
}

/// Synthetic originals for `cfg`, resized when `data.image_size` is set.
pub fn synth_originals(cfg: &PipelineConfig) -> Vec<Sample> {
    let samples = synth_generate(&cfg.synth, StageSeeds::derive(cfg.seed).synth);
    match cfg.data.image_size {
        Some(side) => samples.iter().map(|s| resize_sample(s, side)).collect(),
        None => samples,
    }
}

/// Train/test partition of originals, identical to the manifest split.
pub fn split_originals(
    originals: &[Sample],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<Sample>, Vec<Sample>), DatasetError> {
    let records = originals
        .iter()
        .map(|s| SampleRecord {
            id: s.id.clone(),
            image: String::new(),
            annotation: None,
            annotation_format: Default::default(),
            kind: s.kind,
            split: None,
            origin: None,
            transforms: Vec::new(),
        })
        .collect();
    let outcome = split_dataset(&DatasetManifest::new(seed, records), train_fraction, seed)?;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (s, r) in originals.iter().zip(&outcome.manifest.samples) {
        match r.split {
            Some(Split::Train) => train.push(s.clone()),
            _ => test.push(s.clone()),
        }
    }
    Ok((train, test))
}

pub struct Experiment {
    pub train_originals: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub history: Vec<EpochRecord>,
    pub params: NetworkParams<f32>,
    pub results: Vec<ImageResult>,
    pub report: EvalReport,
    pub train_time: Duration,
}

/// Runs every stage on `originals` with the seeds derived from `cfg.seed`.
pub fn run_experiment(
    originals: &[Sample],
    cfg: &PipelineConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<Experiment, PipelineError> {
    let seeds = StageSeeds::derive(cfg.seed);
    let (train_orig, test) = split_originals(originals, cfg.data.train_fraction, seeds.split)?;
    let ids: Vec<String> = train_orig.iter().map(|s| s.id.clone()).collect();
    let plan = AugmentPlan::random(&ids, cfg.augment.multiplier, &cfg.augment.ranges, seeds.augment);
    let train: Vec<Sample> = expand_dataset(&train_orig, &plan)?.into_iter().map(|a| a.sample).collect();

    let started = Instant::now();
    let outcome = crate::nn::train_with_progress::<f32>(&train, &cfg.detector, &cfg.train, seeds.train, on_epoch)?;
    let train_time = started.elapsed();

    let results = test_results(&outcome.params, cfg, &test)?;
    let report = evaluate(&results, &cfg.eval);
    Ok(Experiment {
        train_originals: train_orig.len(),
        train_samples: train.len(),
        test_samples: test.len(),
        history: outcome.history,
        params: outcome.params,
        results,
        report,
        train_time,
    })
}

/// Detections at `eval.ap_score_floor` for every sample.
pub fn test_results(
    params: &NetworkParams<f32>,
    cfg: &PipelineConfig,
    samples: &[Sample],
) -> Result<Vec<ImageResult>, NetError> {
    samples
        .iter()
        .map(|s| {
            let inf = detect(params, &cfg.detector, &s.image, cfg.eval.ap_score_floor)?;
            Ok(ImageResult {
                id: s.id.clone(),
                kind: s.kind,
                detections: inf.detections,
                ground_truth: s.annotations.clone(),
            })
        })
        .collect()
}
