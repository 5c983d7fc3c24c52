//! Annotation-preserving augmentation: mirror, brightness, contrast and
//! sharpness, plus expansion plans.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Annotation, GrayImage, Sample};
use crate::geometry::BBox;

#[derive(Debug, Error, PartialEq)]
pub enum AugmentError {
    #[error("transform {kind:?} is excluded: geometry-distorting augmentation can fake or hide fractures")]
    Excluded { kind: String },
    #[error("unknown transform kind {kind:?} (expected mirror, brightness, contrast or sharpness)")]
    UnknownKind { kind: String },
    #[error("{kind}: {message}")]
    InvalidParam { kind: &'static str, message: String },
    #[error("plan references missing original {id:?}")]
    MissingOriginal { id: String },
    #[error("plan: {0}")]
    Parse(String),
}

/// Kinds rejected at plan construction.
pub const EXCLUDED_KINDS: [&str; 3] = ["shear", "strain", "spot_noise"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Transform {
    Mirror,
    Brightness {
        delta: i32,
    },
    Contrast {
        factor: f64,
        /// Fixed pivot intensity; the image mean when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pivot: Option<f64>,
    },
    Sharpness {
        amount: f64,
    },
}

impl Transform {
    pub fn name(&self) -> &'static str {
        match self {
            Transform::Mirror => "mirror",
            Transform::Brightness { .. } => "brightness",
            Transform::Contrast { .. } => "contrast",
            Transform::Sharpness { .. } => "sharpness",
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let bad = |message: String| Err(AugmentError::InvalidParam { kind: self.name(), message });
        match *self {
            Transform::Mirror => Ok(()),
            Transform::Brightness { delta } if delta.abs() > 255 => {
                bad(format!("|delta| = {} exceeds 255", delta.abs()))
            }
            Transform::Contrast { factor, .. } if !(factor > 0.0 && factor <= 8.0) => {
                bad(format!("factor {factor} outside (0, 8]"))
            }
            Transform::Contrast { pivot: Some(p), .. } if !(0.0..=255.0).contains(&p) => {
                bad(format!("pivot {p} outside [0, 255]"))
            }
            Transform::Sharpness { amount } if !(0.0..=4.0).contains(&amount) => {
                bad(format!("amount {amount} outside [0, 4]"))
            }
            _ => Ok(()),
        }
    }

    pub fn is_photometric(&self) -> bool {
        !matches!(self, Transform::Mirror)
    }

    /// Applies to a validated transform.
    pub fn apply(&self, s: &Sample) -> Sample {
        match *self {
            Transform::Mirror => mirror(s),
            Transform::Brightness { delta } => brightness(s, delta),
            Transform::Contrast { factor, pivot } => contrast(s, factor, pivot),
            Transform::Sharpness { amount } => sharpness(s, amount),
        }
    }

    /// Parses one transform, rejecting excluded and unknown kinds by name.
    pub fn from_json(value: &serde_json::Value) -> Result<Transform, AugmentError> {
        let kind = value
            .get("kind")
            .and_then(|k| k.as_str())
            .ok_or_else(|| AugmentError::Parse(format!("transform without a string \"kind\": {value}")))?;
        if EXCLUDED_KINDS.contains(&kind) {
            return Err(AugmentError::Excluded { kind: kind.into() });
        }
        if !["mirror", "brightness", "contrast", "sharpness"].contains(&kind) {
            return Err(AugmentError::UnknownKind { kind: kind.into() });
        }
        let t: Transform = serde_json::from_value(value.clone()).map_err(|e| AugmentError::Parse(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }
}

fn with_image(s: &Sample, image: GrayImage) -> Sample {
    Sample { image, ..s.clone() }
}

/// Horizontal flip; box (x1, y1, x2, y2) maps to (W - x2, y1, W - x1, y2).
pub fn mirror(s: &Sample) -> Sample {
    let (w, h) = (s.image.width, s.image.height);
    let mut image = GrayImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            image.set(w - 1 - x, y, s.image.get(x, y));
        }
    }
    let wf = w as f64;
    let annotations = s
        .annotations
        .iter()
        .map(|a| Annotation { label: a.label, bbox: a.bbox.map(|b| BBox::new(wf - b.x2, b.y1, wf - b.x1, b.y2)) })
        .collect();
    Sample { image, annotations, ..s.clone() }
}

pub fn brightness(s: &Sample, delta: i32) -> Sample {
    let mut image = s.image.clone();
    for p in image.pixels.iter_mut() {
        *p = (*p as i32 + delta).clamp(0, 255) as u8;
    }
    with_image(s, image)
}

/// `p -> pivot + factor * (p - pivot)`, pivot defaulting to the image mean.
pub fn contrast(s: &Sample, factor: f64, pivot: Option<f64>) -> Sample {
    let pivot = pivot.unwrap_or_else(|| s.image.mean());
    let mut image = s.image.clone();
    for p in image.pixels.iter_mut() {
        *p = (pivot + factor * (*p as f64 - pivot)).round().clamp(0.0, 255.0) as u8;
    }
    with_image(s, image)
}

/// 3x3 box blur with replicated borders.
pub fn box_blur3(img: &GrayImage) -> Vec<f64> {
    let (w, h) = (img.width as i64, img.height as i64);
    let mut out = vec![0.0; img.pixels.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let xx = (x + dx).clamp(0, w - 1) as u32;
                    let yy = (y + dy).clamp(0, h - 1) as u32;
                    acc += img.get(xx, yy) as f64;
                }
            }
            out[(y * w + x) as usize] = acc / 9.0;
        }
    }
    out
}

/// Unsharp mask `p + amount * (p - blur3x3(p))`.
pub fn sharpness(s: &Sample, amount: f64) -> Sample {
    if amount == 0.0 {
        return s.clone();
    }
    let blur = box_blur3(&s.image);
    let mut image = s.image.clone();
    for (p, b) in image.pixels.iter_mut().zip(blur) {
        let v = *p as f64;
        *p = (v + amount * (v - b)).round().clamp(0.0, 255.0) as u8;
    }
    with_image(s, image)
}

/// Sampling ranges for random plans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentRanges {
    pub brightness: i32,
    pub contrast_min: f64,
    pub contrast_max: f64,
    pub sharpness_max: f64,
    pub mirror_probability: f64,
    pub photometric_probability: f64,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        Self {
            brightness: 40,
            contrast_min: 0.6,
            contrast_max: 1.8,
            sharpness_max: 1.5,
            mirror_probability: 0.5,
            photometric_probability: 0.6,
        }
    }
}

impl AugmentRanges {
    pub fn validate(&self) -> Result<(), String> {
        if !(0..=255).contains(&self.brightness) {
            return Err(format!("brightness range {} outside [0, 255]", self.brightness));
        }
        if !(self.contrast_min > 0.0 && self.contrast_min <= self.contrast_max && self.contrast_max <= 8.0) {
            return Err(format!("contrast range [{}, {}] invalid", self.contrast_min, self.contrast_max));
        }
        if !(0.0..=4.0).contains(&self.sharpness_max) {
            return Err(format!("sharpness_max {} outside [0, 4]", self.sharpness_max));
        }
        for p in [self.mirror_probability, self.photometric_probability] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("probability {p} outside [0, 1]"));
            }
        }
        Ok(())
    }

    /// A non-empty random transform chain.
    fn sample_chain(&self, rng: &mut ChaCha8Rng) -> Vec<Transform> {
        loop {
            let mut chain = Vec::new();
            if rng.gen_bool(self.mirror_probability) {
                chain.push(Transform::Mirror);
            }
            if self.brightness > 0 && rng.gen_bool(self.photometric_probability) {
                chain.push(Transform::Brightness { delta: rng.gen_range(-self.brightness..=self.brightness) });
            }
            if rng.gen_bool(self.photometric_probability) {
                chain.push(Transform::Contrast {
                    factor: rng.gen_range(self.contrast_min..=self.contrast_max),
                    pivot: None,
                });
            }
            if self.sharpness_max > 0.0 && rng.gen_bool(self.photometric_probability) {
                chain.push(Transform::Sharpness { amount: rng.gen_range(0.0..=self.sharpness_max) });
            }
            if !chain.is_empty() {
                return chain;
            }
        }
    }
}

/// Transform chains for one original. An empty chain is the identity copy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanEntry {
    pub original: String,
    pub variants: Vec<Vec<Transform>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AugmentPlan {
    pub seed: u64,
    /// Nominal variants per original; entries may deviate to hit an exact total.
    pub multiplier: usize,
    pub entries: Vec<PlanEntry>,
}

impl AugmentPlan {
    /// Checks every transform; excluded kinds cannot appear in a constructed plan.
    pub fn new(seed: u64, multiplier: usize, entries: Vec<PlanEntry>) -> Result<Self, AugmentError> {
        for t in entries.iter().flat_map(|e| e.variants.iter().flatten()) {
            t.validate()?;
        }
        Ok(Self { seed, multiplier, entries })
    }

    pub fn from_json(text: &str) -> Result<Self, AugmentError> {
        let v: serde_json::Value = serde_json::from_str(text).map_err(|e| AugmentError::Parse(e.to_string()))?;
        let obj = v.as_object().ok_or_else(|| AugmentError::Parse("plan must be a JSON object".into()))?;
        for key in obj.keys() {
            if !["seed", "multiplier", "entries"].contains(&key.as_str()) {
                return Err(AugmentError::Parse(format!("unknown field {key:?}")));
            }
        }
        let seed = obj.get("seed").and_then(|s| s.as_u64()).unwrap_or(0);
        let multiplier = obj.get("multiplier").and_then(|s| s.as_u64()).unwrap_or(1) as usize;
        let raw_entries = obj
            .get("entries")
            .and_then(|e| e.as_array())
            .ok_or_else(|| AugmentError::Parse("missing \"entries\" array".into()))?;
        let mut entries = Vec::with_capacity(raw_entries.len());
        for e in raw_entries {
            let original = e
                .get("original")
                .and_then(|o| o.as_str())
                .ok_or_else(|| AugmentError::Parse(format!("entry without \"original\": {e}")))?
                .to_string();
            let variants = e
                .get("variants")
                .and_then(|v| v.as_array())
                .ok_or_else(|| AugmentError::Parse(format!("entry {original:?} without \"variants\"")))?
                .iter()
                .map(|chain| {
                    chain
                        .as_array()
                        .ok_or_else(|| AugmentError::Parse(format!("variant of {original:?} is not an array")))?
                        .iter()
                        .map(Transform::from_json)
                        .collect::<Result<Vec<_>, _>>()
                })
                .collect::<Result<Vec<_>, _>>()?;
            entries.push(PlanEntry { original, variants });
        }
        Self::new(seed, multiplier, entries)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    /// `multiplier` variants per original: the identity first, then random chains.
    pub fn random(originals: &[String], multiplier: usize, ranges: &AugmentRanges, seed: u64) -> Self {
        let counts = vec![multiplier; originals.len()];
        Self::random_with_counts(originals, &counts, multiplier, ranges, seed)
    }

    /// Distributes exactly `total` variants over the originals, earlier ones
    /// receiving the remainder.
    pub fn random_total(originals: &[String], total: usize, ranges: &AugmentRanges, seed: u64) -> Self {
        let n = originals.len().max(1);
        let counts: Vec<usize> = (0..originals.len()).map(|i| total / n + usize::from(i < total % n)).collect();
        Self::random_with_counts(originals, &counts, total / n, ranges, seed)
    }

    fn random_with_counts(
        originals: &[String],
        counts: &[usize],
        multiplier: usize,
        ranges: &AugmentRanges,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = originals
            .iter()
            .zip(counts)
            .map(|(id, &count)| {
                let variants =
                    (0..count).map(|k| if k == 0 { Vec::new() } else { ranges.sample_chain(&mut rng) }).collect();
                PlanEntry { original: id.clone(), variants }
            })
            .collect();
        Self { seed, multiplier, entries }
    }

    pub fn total(&self) -> usize {
        self.entries.iter().map(|e| e.variants.len()).sum()
    }
}

/// An expanded sample with the transform chain that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    pub sample: Sample,
    pub transforms: Vec<Transform>,
}

/// Applies the plan. Output ids are `<original>_aNNN`; origins point back.
pub fn expand_dataset(originals: &[Sample], plan: &AugmentPlan) -> Result<Vec<Augmented>, AugmentError> {
    let mut out = Vec::with_capacity(plan.total());
    for entry in &plan.entries {
        let base = originals
            .iter()
            .find(|s| s.id == entry.original)
            .ok_or_else(|| AugmentError::MissingOriginal { id: entry.original.clone() })?;
        for (k, chain) in entry.variants.iter().enumerate() {
            let mut s = base.clone();
            for t in chain {
                s = t.apply(&s);
            }
            s.id = format!("{}_a{k:03}", base.id);
            s.origin = Some(base.id.clone());
            out.push(Augmented { sample: s, transforms: chain.clone() });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Label, SampleKind};
    use proptest::prelude::*;

    fn sample(w: u32, h: u32, pixels: Vec<u8>, boxes: &[BBox]) -> Sample {
        Sample {
            id: "s".into(),
            image: GrayImage::from_pixels(w, h, pixels).unwrap(),
            annotations: boxes.iter().map(|&b| Annotation::fracture(b)).collect(),
            kind: if boxes.is_empty() { SampleKind::HandNegative } else { SampleKind::Positive },
            origin: None,
        }
    }

    fn ramp(w: u32, h: u32) -> Vec<u8> {
        (0..w * h).map(|i| ((i * 37) % 256) as u8).collect()
    }

    #[test]
    fn mirror_examples() {
        let s = sample(100, 4, ramp(100, 4), &[BBox::new(10.0, 5.0, 30.0, 25.0), BBox::new(40.0, 0.0, 60.0, 3.0)]);
        let m = mirror(&s);
        assert_eq!(m.annotations[0].bbox, Some(BBox::new(70.0, 5.0, 90.0, 25.0)));
        assert_eq!(m.annotations[1].bbox, Some(BBox::new(40.0, 0.0, 60.0, 3.0)));
        assert_eq!(m.image.get(0, 1), s.image.get(99, 1));
        assert_eq!(mirror(&m), s);
    }

    #[test]
    fn brightness_examples() {
        let s = sample(8, 8, ramp(8, 8), &[BBox::new(1.0, 1.0, 5.0, 5.0)]);
        assert_eq!(brightness(&s, 0), s);
        let white = brightness(&s, 255);
        assert!(white.image.pixels.iter().all(|&p| p == 255));
        assert_eq!(white.annotations, s.annotations);
    }

    #[test]
    fn contrast_examples() {
        let s = sample(8, 8, ramp(8, 8), &[]);
        assert_eq!(contrast(&s, 1.0, None), s);
        let flat = contrast(&s, 1e-9, None);
        let mean = s.image.mean();
        assert!(flat.image.pixels.iter().all(|&p| (p as f64 - mean).abs() <= 0.5));
        // non-clamping input: mean preserved within one level
        let mid: Vec<u8> = (0..64).map(|i| 100 + (i % 40) as u8).collect();
        let s = sample(8, 8, mid, &[]);
        let c = contrast(&s, 1.5, None);
        assert!(c.image.pixels.iter().all(|&p| p > 0 && p < 255));
        assert!((c.image.mean() - s.image.mean()).abs() <= 1.0);
        let fixed = contrast(&s, 2.0, Some(128.0));
        assert_eq!(fixed.image.get(0, 0), (128.0 + 2.0 * (100.0 - 128.0)) as u8);
    }

    #[test]
    fn sharpness_examples() {
        let s = sample(8, 8, ramp(8, 8), &[]);
        assert_eq!(sharpness(&s, 0.0), s);
        let c = sample(6, 6, vec![91; 36], &[]);
        assert_eq!(sharpness(&c, 3.7), c);
    }

    /// Across the edge, the gap between the two pixels adjacent to the step grows with amount.
    #[test]
    fn step_edge_steepens_monotonically() {
        let row: Vec<u8> = (0..16).map(|x| if x < 8 { 80 } else { 160 }).collect();
        let pixels: Vec<u8> = (0..4).flat_map(|_| row.clone()).collect();
        let s = sample(16, 4, pixels, &[]);
        let mut prev = 80i32;
        for k in 1..=8 {
            let out = sharpness(&s, k as f64 * 0.5);
            let gap = out.image.get(8, 1) as i32 - out.image.get(7, 1) as i32;
            assert!(gap >= prev, "amount {}: {gap} < {prev}", k as f64 * 0.5);
            prev = gap;
        }
        assert!(prev > 80);
    }

    #[test]
    fn excluded_kinds_rejected_at_plan_construction() {
        for kind in EXCLUDED_KINDS {
            let text = format!(
                r#"{{"seed":1,"multiplier":2,"entries":[{{"original":"a","variants":[[],[{{"kind":"{kind}"}}]]}}]}}"#
            );
            assert_eq!(AugmentPlan::from_json(&text), Err(AugmentError::Excluded { kind: kind.into() }));
        }
        let text = r#"{"entries":[{"original":"a","variants":[[{"kind":"rotate"}]]}]}"#;
        assert!(matches!(AugmentPlan::from_json(text), Err(AugmentError::UnknownKind { .. })));
        let text = r#"{"entries":[{"original":"a","variants":[[{"kind":"contrast","factor":0}]]}]}"#;
        assert!(matches!(AugmentPlan::from_json(text), Err(AugmentError::InvalidParam { .. })));
    }

    #[test]
    fn plan_json_roundtrip() {
        let ids: Vec<String> = (0..5).map(|i| format!("o{i}")).collect();
        let plan = AugmentPlan::random(&ids, 4, &AugmentRanges::default(), 3);
        assert_eq!(AugmentPlan::from_json(&plan.to_json()).unwrap(), plan);
    }

    #[test]
    fn table_one_tiers_expressible() {
        let ids: Vec<String> = (0..38).map(|i| format!("p{i}")).collect();
        for total in [552, 4280, 4476] {
            let plan = AugmentPlan::random_total(&ids, total, &AugmentRanges::default(), 7);
            assert_eq!(plan.total(), total);
        }
    }

    #[test]
    fn identity_plan_changes_only_origin() {
        let s = sample(16, 16, ramp(16, 16), &[BBox::new(2.0, 2.0, 9.0, 12.0)]);
        let plan = AugmentPlan::new(0, 1, vec![PlanEntry { original: "s".into(), variants: vec![vec![]] }]).unwrap();
        let out = expand_dataset(std::slice::from_ref(&s), &plan).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].sample.image, s.image);
        assert_eq!(out[0].sample.annotations, s.annotations);
        assert_eq!(out[0].sample.origin.as_deref(), Some("s"));
    }

    #[test]
    fn missing_original_named() {
        let plan =
            AugmentPlan::new(0, 1, vec![PlanEntry { original: "ghost".into(), variants: vec![vec![]] }]).unwrap();
        assert_eq!(expand_dataset(&[], &plan), Err(AugmentError::MissingOriginal { id: "ghost".into() }));
    }

    #[test]
    fn expansion_deterministic_and_valid() {
        let samples: Vec<Sample> = (0..4)
            .map(|i| {
                let mut s = sample(32, 32, ramp(32, 32), &[BBox::new(3.0 + i as f64, 4.0, 20.0, 29.0)]);
                s.id = format!("o{i}");
                s
            })
            .collect();
        let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
        let plan = AugmentPlan::random(&ids, 6, &AugmentRanges::default(), 11);
        let a = expand_dataset(&samples, &plan).unwrap();
        assert_eq!(a, expand_dataset(&samples, &plan).unwrap());
        assert_eq!(a.len(), 24);
        for aug in &a {
            assert!(aug.sample.validate().is_ok());
            assert!(aug.sample.annotations.iter().all(|x| x.label == Label::Fracture));
        }
    }

    proptest! {
        #[test]
        fn photometric_transforms_keep_boxes(
            delta in -255i32..=255, factor in 0.01f64..8.0, amount in 0.0f64..4.0,
            x1 in 0u32..20, y1 in 0u32..20, w in 1u32..12, h in 1u32..12,
        ) {
            let b = BBox::new(x1 as f64 + 0.25, y1 as f64, (x1 + w) as f64, (y1 + h) as f64 + 0.5);
            let s = sample(32, 32, ramp(32, 32), &[b]);
            for out in [brightness(&s, delta), contrast(&s, factor, None), sharpness(&s, amount)] {
                prop_assert_eq!(&out.annotations, &s.annotations);
            }
        }

        #[test]
        fn mirror_is_involution(pixels in proptest::collection::vec(any::<u8>(), 7 * 5), x1 in 0u32..6, w in 1u32..2) {
            let s = sample(7, 5, pixels, &[BBox::new(x1 as f64, 0.0, (x1 + w) as f64, 5.0)]);
            prop_assert_eq!(mirror(&mirror(&s)), s);
        }
    }
}
