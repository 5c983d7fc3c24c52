//! The single pipeline configuration file (TOML). Every section and key is
//! optional and defaults as documented on each field; unknown keys are
//! rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::AugmentRanges;
use crate::dataset::SynthConfig;
use crate::eval::EvalConfig;
use crate::nn::{DetectorConfig, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("override {text:?}: {message}")]
    Override { text: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Dataset manifest; relative paths resolve against the config file.
    pub manifest: Option<PathBuf>,
    /// Square side images are padded and resized to; `None` keeps native size.
    pub image_size: Option<u32>,
    pub train_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { manifest: None, image_size: None, train_fraction: 0.8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Samples per training original, the first being the original itself.
    pub multiplier: usize,
    /// Explicit plan file; overrides `multiplier` and `ranges`.
    pub plan: Option<PathBuf>,
    pub ranges: AugmentRanges,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { multiplier: 4, plan: None, ranges: AugmentRanges::default() }
    }
}

/// Annotated-image output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    /// RGB of box outlines and label text.
    pub color: [u8; 3],
    /// Outline width in pixels, drawn inward from the box edge.
    pub thickness: u32,
    /// Integer magnification of the 8x8 bitmap font.
    pub text_scale: u32,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { color: [0, 0, 255], thickness: 1, text_scale: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub augment: AugmentConfig,
    pub detector: DetectorConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub render: RenderConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str, source: &Path) -> Result<Self, ConfigError> {
        let cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: source.into(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let mut cfg = Self::from_toml(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.data.manifest, &mut self.augment.plan].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |section: &str, m: String| ConfigError::Invalid(format!("[{section}] {m}"));
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0) {
            return Err(invalid("data", format!("train_fraction {} outside (0, 1)", self.data.train_fraction)));
        }
        if let Some(s) = self.data.image_size {
            if s < 16 {
                return Err(invalid("data", format!("image_size {s} below 16")));
            }
        }
        self.synth.validate().map_err(|m| invalid("synth", m))?;
        if self.augment.multiplier == 0 {
            return Err(invalid("augment", "multiplier must be at least 1".into()));
        }
        self.augment.ranges.validate().map_err(|m| invalid("augment.ranges", m))?;
        self.detector.validate().map_err(|e| invalid("detector", e.to_string()))?;
        self.train.validate().map_err(|m| invalid("train", m))?;
        self.eval.validate().map_err(|m| invalid("eval", m))?;
        if self.render.thickness == 0 || self.render.text_scale == 0 {
            return Err(invalid("render", "thickness and text_scale must be at least 1".into()));
        }
        Ok(())
    }

    /// Applies `section.key=value` (dotted path, TOML value syntax; bare words
    /// are taken as strings) and revalidates.
    pub fn apply_override(&mut self, text: &str) -> Result<(), ConfigError> {
        let err = |message: String| ConfigError::Override { text: text.into(), message };
        let (path, raw) = text.split_once('=').ok_or_else(|| err("expected key=value".into()))?;
        let keys: Vec<&str> = path.trim().split('.').collect();
        if keys.iter().any(|k| k.is_empty()) {
            return Err(err("empty key segment".into()));
        }
        let raw = raw.trim();
        let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));

        let mut doc = toml::Value::try_from(&*self).map_err(|e| err(e.to_string()))?;
        let mut node = &mut doc;
        for key in &keys[..keys.len() - 1] {
            let table = node.as_table_mut().ok_or_else(|| err(format!("{key:?} is not a section")))?;
            node = table.entry(key.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        }
        let table = node.as_table_mut().ok_or_else(|| err("parent is not a section".into()))?;
        table.insert(keys[keys.len() - 1].to_string(), value);
        let updated: PipelineConfig = doc.try_into().map_err(|e: toml::de::Error| err(e.to_string()))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }
}
