use fracdet_core::augment::AugmentError;
use fracdet_core::config::ConfigError;
use fracdet_core::dataset::DatasetError;
use fracdet_core::eval::EvalError;
use fracdet_core::nn::{NetError, TrainError};
use fracdet_core::pipeline::PipelineError;

pub const OK: u8 = 0;
pub const USAGE: u8 = 1;
pub const DATA: u8 = 2;
pub const INTERNAL: u8 = 3;

/// A missing or contradictory command-line input.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Input that could be read but not used, e.g. a detections file without the requested image.
#[derive(Debug)]
pub struct DataError(pub String);

impl std::fmt::Display for DataError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for DataError {}

fn net(e: &NetError) -> u8 {
    match e {
        NetError::Io { .. } | NetError::Checkpoint(_) => DATA,
        NetError::Structure(_) => USAGE,
        NetError::Shape(_) | NetError::NonFiniteGradient { .. } => INTERNAL,
    }
}

fn train(e: &TrainError) -> u8 {
    match e {
        TrainError::Net(n) => net(n),
        TrainError::Anchor(_) | TrainError::Config(_) => USAGE,
        TrainError::EmptyDataset | TrainError::NoPositives => DATA,
        TrainError::Step { source, .. } => train(source),
    }
}

/// The error chain joined by ": ", skipping causes already quoted by their parent.
pub fn describe(err: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

/// Exit code of the first recognised error in the chain; unrecognised errors are internal.
pub fn classify(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() || cause.is::<ConfigError>() {
            return USAGE;
        }
        if cause.is::<DataError>()
            || cause.is::<DatasetError>()
            || cause.is::<AugmentError>()
            || cause.is::<EvalError>()
            || cause.is::<std::io::Error>()
            || cause.is::<serde_json::Error>()
            || cause.is::<image::ImageError>()
        {
            return DATA;
        }
        if let Some(e) = cause.downcast_ref::<NetError>() {
            return net(e);
        }
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            return train(e);
        }
        if let Some(e) = cause.downcast_ref::<PipelineError>() {
            return match e {
                PipelineError::Dataset(_) | PipelineError::Augment(_) => DATA,
                PipelineError::Train(t) => train(t),
                PipelineError::Net(n) => net(n),
            };
        }
    }
    INTERNAL
}
