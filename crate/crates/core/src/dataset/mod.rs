//! Annotated samples, the two-label-plus-negatives corpus, manifests and
//! stratified train/test splits.

mod annotations;
mod raster;
mod synth;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use annotations::{
    load_annotations, parse_voc_xml, parse_vott_json, write_voc_xml, AnnotationFile, AnnotationFormat,
};
pub use raster::{load_gray, save_gray_png, GrayImage};
pub use synth::{synth_generate, SynthConfig};

use crate::augment::Transform;
use crate::geometry::BBox;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: cannot decode image: {message}")]
    Image { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{record}: unknown label {label:?} (expected \"fracture\" or \"hand_no_fracture\")")]
    UnknownLabel { label: String, record: String },
    #[error("{record}: malformed box ({x1}, {y1}, {x2}, {y2}), need x1 < x2 and y1 < y2")]
    MalformedBox { record: String, x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("{record}: box ({x1}, {y1}, {x2}, {y2}) outside the {width}x{height} image")]
    OutOfBounds { record: String, x1: f64, y1: f64, x2: f64, y2: f64, width: u32, height: u32 },
    #[error("sample {id}: {message}")]
    Inconsistent { id: String, message: String },
    #[error("sample {id} references missing original {origin}")]
    MissingOrigin { id: String, origin: String },
    #[error("manifest: {0}")]
    Schema(String),
}

/// Annotation labels of the two-label scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Fracture,
    HandNoFracture,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Fracture, Label::HandNoFracture];

    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Fracture => "fracture",
            Label::HandNoFracture => "hand_no_fracture",
        }
    }

    /// Detection-head class index; 0 is background.
    pub fn class_index(&self) -> usize {
        match self {
            Label::Fracture => 1,
            Label::HandNoFracture => 2,
        }
    }

    pub fn from_class_index(index: usize) -> Option<Label> {
        match index {
            1 => Some(Label::Fracture),
            2 => Some(Label::HandNoFracture),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "fracture" => Ok(Label::Fracture),
            "hand_no_fracture" => Ok(Label::HandNoFracture),
            other => Err(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub label: Label,
    /// Required for fractures; optional (whole image) for hands without fracture.
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BBox>,
}

impl Annotation {
    pub fn fracture(bbox: BBox) -> Self {
        Self { label: Label::Fracture, bbox: Some(bbox) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    /// At least one fracture annotation.
    Positive,
    /// Hand image without fracture.
    HandNegative,
    /// Unrelated image, no annotations.
    PureNegative,
}

impl SampleKind {
    pub const ALL: [SampleKind; 3] = [SampleKind::Positive, SampleKind::HandNegative, SampleKind::PureNegative];

    pub fn as_str(&self) -> &'static str {
        match self {
            SampleKind::Positive => "positive",
            SampleKind::HandNegative => "hand_negative",
            SampleKind::PureNegative => "pure_negative",
        }
    }

    /// Kind implied by annotation content; `is_hand` separates the two negatives.
    pub fn infer(annotations: &[Annotation], is_hand: bool) -> SampleKind {
        if annotations.iter().any(|a| a.label == Label::Fracture) {
            SampleKind::Positive
        } else if is_hand || !annotations.is_empty() {
            SampleKind::HandNegative
        } else {
            SampleKind::PureNegative
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: GrayImage,
    pub annotations: Vec<Annotation>,
    pub kind: SampleKind,
    /// Id of the original this sample was augmented from.
    pub origin: Option<String>,
}

impl Sample {
    pub fn width(&self) -> u32 {
        self.image.width
    }

    pub fn height(&self) -> u32 {
        self.image.height
    }

    pub fn fracture_boxes(&self) -> Vec<BBox> {
        self.annotations.iter().filter(|a| a.label == Label::Fracture).filter_map(|a| a.bbox).collect()
    }

    pub fn has_fracture(&self) -> bool {
        self.kind == SampleKind::Positive
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let inconsistent = |m: &str| DatasetError::Inconsistent { id: self.id.clone(), message: m.into() };
        let has_fracture = self.annotations.iter().any(|a| a.label == Label::Fracture);
        match self.kind {
            SampleKind::Positive if !has_fracture => {
                return Err(inconsistent("positive sample without fracture annotation"))
            }
            SampleKind::HandNegative | SampleKind::PureNegative if has_fracture => {
                return Err(inconsistent("negative sample carries a fracture annotation"))
            }
            SampleKind::PureNegative if !self.annotations.is_empty() => {
                return Err(inconsistent("pure negative sample carries annotations"))
            }
            _ => {}
        }
        for (k, a) in self.annotations.iter().enumerate() {
            let record = format!("{} object #{k}", self.id);
            match a.bbox {
                Some(b) => validate_box(&b, &record, self.width(), self.height())?,
                None if a.label == Label::Fracture => return Err(inconsistent("fracture annotation without a box")),
                None => {}
            }
        }
        Ok(())
    }
}

pub(crate) fn validate_box(b: &BBox, record: &str, width: u32, height: u32) -> Result<(), DatasetError> {
    if !(b.is_valid() && b.x1 < b.x2 && b.y1 < b.y2) {
        return Err(DatasetError::MalformedBox { record: record.into(), x1: b.x1, y1: b.y1, x2: b.x2, y2: b.y2 });
    }
    if !b.is_inside(width as f64, height as f64) {
        return Err(DatasetError::OutOfBounds {
            record: record.into(),
            x1: b.x1,
            y1: b.y1,
            x2: b.x2,
            y2: b.y2,
            width,
            height,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// One entry of a dataset manifest. Paths are relative to the manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub id: String,
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<String>,
    #[serde(default)]
    pub annotation_format: AnnotationFormat,
    pub kind: SampleKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<String>,
    /// Transforms that produced this sample from `origin`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub transforms: Vec<Transform>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_fraction: Option<f64>,
    pub samples: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn new(seed: u64, samples: Vec<SampleRecord>) -> Self {
        Self { schema_version: MANIFEST_SCHEMA_VERSION, seed, train_fraction: None, samples }
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io { path: path.into(), source })?;
        let m: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| DatasetError::Parse { path: path.into(), message: e.to_string() })?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(DatasetError::Schema(format!(
                "unsupported schema version {} (expected {MANIFEST_SCHEMA_VERSION})",
                m.schema_version
            )));
        }
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        std::fs::write(path, self.to_json() + "\n").map_err(|source| DatasetError::Io { path: path.into(), source })
    }

    pub fn records_in(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.samples.iter().filter(move |r| r.split == Some(split))
    }

    /// Sample counts per (kind, split) for originals and augmented records.
    pub fn counts(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for r in &self.samples {
            let split = match r.split {
                Some(Split::Train) => "train",
                Some(Split::Test) => "test",
                None => "unassigned",
            };
            let origin = if r.origin.is_some() { "augmented" } else { "original" };
            *out.entry(format!("{}/{split}/{origin}", r.kind.as_str())).or_insert(0) += 1;
        }
        out
    }

    /// Reads every sample's image and annotations, resolving paths against `base`.
    pub fn load_samples(&self, base: &Path, split: Option<Split>) -> Result<Vec<Sample>, DatasetError> {
        self.samples.iter().filter(|r| split.is_none() || r.split == split).map(|r| load_sample(r, base)).collect()
    }
}

pub fn load_sample(record: &SampleRecord, base: &Path) -> Result<Sample, DatasetError> {
    let image = load_gray(&base.join(&record.image))?;
    let annotations = match &record.annotation {
        Some(p) => {
            let file = load_annotations(&base.join(p), record.annotation_format)?;
            if let (Some(w), Some(h)) = (file.width, file.height) {
                if (w, h) != (image.width, image.height) {
                    return Err(DatasetError::Inconsistent {
                        id: record.id.clone(),
                        message: format!("annotation declares {w}x{h} but image is {}x{}", image.width, image.height),
                    });
                }
            }
            file.annotations
        }
        None => Vec::new(),
    };
    let sample = Sample { id: record.id.clone(), image, annotations, kind: record.kind, origin: record.origin.clone() };
    sample.validate()?;
    Ok(sample)
}

/// Writes `images/<id>.png` and, when annotated, `annotations/<id>.xml`
/// under `base`; the returned record has no split.
pub fn save_sample(sample: &Sample, base: &Path) -> Result<SampleRecord, DatasetError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| DatasetError::Io { path, source }
    };
    let image = format!("images/{}.png", sample.id);
    let image_path = base.join(&image);
    let dir = image_path.parent().expect("joined path has a parent");
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    save_gray_png(&image_path, &sample.image)?;
    let annotation = if sample.annotations.is_empty() {
        None
    } else {
        let rel = format!("annotations/{}.xml", sample.id);
        let path = base.join(&rel);
        let dir = path.parent().expect("joined path has a parent");
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let xml = write_voc_xml(&format!("{}.png", sample.id), sample.width(), sample.height(), &sample.annotations);
        std::fs::write(&path, xml).map_err(io(&path))?;
        Some(rel)
    };
    Ok(SampleRecord {
        id: sample.id.clone(),
        image,
        annotation,
        annotation_format: AnnotationFormat::VocXml,
        kind: sample.kind,
        split: None,
        origin: sample.origin.clone(),
        transforms: Vec::new(),
    })
}

/// Outcome of [`split_dataset`]: the assigned manifest plus non-fatal warnings.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitOutcome {
    pub manifest: DatasetManifest,
    pub warnings: Vec<String>,
}

/// Stratified split at original-image granularity. Within each kind the
/// originals are shuffled with `seed` and the first `round(n * train_fraction)`
/// go to train; augmented records follow their original.
pub fn split_dataset(manifest: &DatasetManifest, train_fraction: f64, seed: u64) -> Result<SplitOutcome, DatasetError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DatasetError::Schema(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let mut out = manifest.clone();
    out.seed = seed;
    out.train_fraction = Some(train_fraction);
    let mut warnings = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assigned: BTreeMap<String, Split> = BTreeMap::new();
    for kind in SampleKind::ALL {
        let mut ids: Vec<&str> =
            manifest.samples.iter().filter(|r| r.kind == kind && r.origin.is_none()).map(|r| r.id.as_str()).collect();
        if ids.is_empty() {
            warnings.push(format!("no {} originals to split", kind.as_str()));
            continue;
        }
        ids.shuffle(&mut rng);
        let n_train = (ids.len() as f64 * train_fraction).round() as usize;
        for (k, id) in ids.into_iter().enumerate() {
            assigned.insert(id.to_string(), if k < n_train { Split::Train } else { Split::Test });
        }
    }
    for r in out.samples.iter_mut() {
        let key = r.origin.as_ref().unwrap_or(&r.id);
        r.split = Some(
            *assigned.get(key).ok_or_else(|| DatasetError::MissingOrigin { id: r.id.clone(), origin: key.clone() })?,
        );
    }
    Ok(SplitOutcome { manifest: out, warnings })
}

/// Pads to a square with zeros (right/bottom), then bilinearly rescales to
/// `target x target`; boxes scale by the same factor.
pub fn resize_sample(s: &Sample, target: u32) -> Sample {
    let target = target.max(16);
    if s.width() == target && s.height() == target {
        return s.clone();
    }
    let side = s.width().max(s.height());
    let padded = s.image.pad_to(side, side);
    let image = padded.resize_bilinear(target, target);
    let f = target as f64 / side as f64;
    let annotations =
        s.annotations.iter().map(|a| Annotation { label: a.label, bbox: a.bbox.map(|b| b.scale(f, f)) }).collect();
    Sample { id: s.id.clone(), image, annotations, kind: s.kind, origin: s.origin.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, kind: SampleKind, origin: Option<&str>) -> SampleRecord {
        SampleRecord {
            id: id.into(),
            image: format!("images/{id}.png"),
            annotation: None,
            annotation_format: AnnotationFormat::VocXml,
            kind,
            split: None,
            origin: origin.map(String::from),
            transforms: vec![],
        }
    }

    fn full_sized_manifest() -> DatasetManifest {
        let mut samples = Vec::new();
        for (kind, n) in [(SampleKind::Positive, 55), (SampleKind::HandNegative, 40), (SampleKind::PureNegative, 25)] {
            for i in 0..n {
                samples.push(record(&format!("{}_{i}", kind.as_str()), kind, None));
            }
        }
        samples.push(record("aug_0", SampleKind::Positive, Some("positive_3")));
        samples.push(record("aug_1", SampleKind::Positive, Some("positive_40")));
        DatasetManifest::new(0, samples)
    }

    #[test]
    fn stratified_split_counts() {
        let out = split_dataset(&full_sized_manifest(), 0.8, 17).unwrap();
        assert!(out.warnings.is_empty());
        let count = |kind: SampleKind, split: Split| {
            out.manifest
                .samples
                .iter()
                .filter(|r| r.kind == kind && r.origin.is_none() && r.split == Some(split))
                .count()
        };
        assert_eq!((count(SampleKind::Positive, Split::Train), count(SampleKind::Positive, Split::Test)), (44, 11));
        assert_eq!(count(SampleKind::HandNegative, Split::Train), 32);
        assert_eq!(count(SampleKind::PureNegative, Split::Train), 20);
    }

    #[test]
    fn split_is_deterministic_partition_and_keeps_augmented_with_origin() {
        let m = full_sized_manifest();
        let a = split_dataset(&m, 0.8, 5).unwrap().manifest;
        assert_eq!(a, split_dataset(&m, 0.8, 5).unwrap().manifest);
        assert_ne!(a, split_dataset(&m, 0.8, 6).unwrap().manifest);
        assert_eq!(a.samples.len(), m.samples.len());
        assert!(a.samples.iter().all(|r| r.split.is_some()));
        let split_of = |id: &str| a.samples.iter().find(|r| r.id == id).unwrap().split;
        assert_eq!(split_of("aug_0"), split_of("positive_3"));
        assert_eq!(split_of("aug_1"), split_of("positive_40"));
    }

    #[test]
    fn empty_stratum_warns() {
        let m = DatasetManifest::new(0, vec![record("p", SampleKind::Positive, None)]);
        let out = split_dataset(&m, 0.8, 1).unwrap();
        assert_eq!(out.warnings.len(), 2);
    }

    #[test]
    fn missing_origin_is_an_error() {
        let m = DatasetManifest::new(0, vec![record("a", SampleKind::Positive, Some("ghost"))]);
        assert!(matches!(split_dataset(&m, 0.5, 1), Err(DatasetError::MissingOrigin { .. })));
    }

    #[test]
    fn manifest_json_roundtrip() {
        let mut m = split_dataset(&full_sized_manifest(), 0.8, 2).unwrap().manifest;
        m.samples[0].annotation = Some("ann/x.xml".into());
        m.samples[1].transforms = vec![Transform::Mirror, Transform::Brightness { delta: -12 }];
        let back: DatasetManifest = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json(), m.to_json());
    }

    #[test]
    fn unknown_manifest_keys_rejected() {
        let text = r#"{"schema_version":1,"seed":0,"samples":[],"extra":1}"#;
        assert!(serde_json::from_str::<DatasetManifest>(text).is_err());
    }

    fn sample_with_box(w: u32, h: u32, b: BBox) -> Sample {
        let mut image = GrayImage::new(w, h);
        for (i, p) in image.pixels.iter_mut().enumerate() {
            *p = (i % 251) as u8;
        }
        Sample {
            id: "s".into(),
            image,
            annotations: vec![Annotation::fracture(b)],
            kind: SampleKind::Positive,
            origin: None,
        }
    }

    #[test]
    fn resize_identity_and_halving() {
        let s = sample_with_box(64, 64, BBox::new(8.0, 10.0, 30.0, 40.0));
        assert_eq!(resize_sample(&s, 64), s);
        let half = resize_sample(&s, 32);
        assert_eq!((half.width(), half.height()), (32, 32));
        assert_eq!(half.fracture_boxes()[0], BBox::new(4.0, 5.0, 15.0, 20.0));
    }

    #[test]
    fn resize_pads_to_square_and_preserves_area_ratio() {
        let b = BBox::new(10.0, 5.0, 50.0, 35.0);
        let s = sample_with_box(80, 40, b);
        let r = resize_sample(&s, 48);
        let rb = r.fracture_boxes()[0];
        let before = b.area() / (80.0 * 80.0);
        let after = rb.area() / (48.0 * 48.0);
        assert!((before - after).abs() < 1e-12);
        // padded region is black
        assert_eq!(r.image.get(5, 47), 0);
    }

    #[test]
    fn validation_catches_kind_mismatch_and_bounds() {
        let mut s = sample_with_box(32, 32, BBox::new(1.0, 1.0, 10.0, 10.0));
        assert!(s.validate().is_ok());
        s.kind = SampleKind::PureNegative;
        assert!(s.validate().is_err());
        let s = sample_with_box(32, 32, BBox::new(1.0, 1.0, 40.0, 10.0));
        assert!(matches!(s.validate(), Err(DatasetError::OutOfBounds { .. })));
    }

    #[test]
    fn kind_inference() {
        assert_eq!(SampleKind::infer(&[], true), SampleKind::HandNegative);
        assert_eq!(SampleKind::infer(&[], false), SampleKind::PureNegative);
        let f = [Annotation::fracture(BBox::new(0.0, 0.0, 1.0, 1.0))];
        assert_eq!(SampleKind::infer(&f, true), SampleKind::Positive);
    }

    #[test]
    fn label_names_and_indices() {
        for l in Label::ALL {
            assert_eq!(l.as_str().parse::<Label>(), Ok(l));
            assert_eq!(Label::from_class_index(l.class_index()), Some(l));
        }
        assert_eq!("tumor".parse::<Label>(), Err("tumor".to_string()));
        assert_eq!(Label::from_class_index(0), None);
    }

    #[test]
    fn saved_samples_load_back_identically() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { positives: 2, hand_negatives: 1, pure_negatives: 1, ..SynthConfig::default() };
        for s in synth_generate(&cfg, 8) {
            let rec = save_sample(&s, dir.path()).unwrap();
            assert_eq!(rec.annotation.is_some(), !s.annotations.is_empty());
            assert_eq!(load_sample(&rec, dir.path()).unwrap(), s);
        }
    }
}
