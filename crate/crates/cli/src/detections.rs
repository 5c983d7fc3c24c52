//! Detections interchange file.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "images": [
//!     { "id": "pos_003", "image": "data/images/pos_003.png", "width": 96, "height": 96,
//!       "detections": [ { "class": "fracture", "certainty": 0.97,
//!                         "box": { "x1": 10.0, "y1": 12.5, "x2": 30.0, "y2": 31.0 } } ] }
//!   ],
//!   "errors": [ { "image": "missing.png", "error": "..." } ]
//! }
//! ```
//!
//! Boxes are in the pixel coordinates of the named image file.

use std::path::Path;

use anyhow::Context;
use fracdet_core::Detection;
use serde::{Deserialize, Serialize};

pub const DETECTIONS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageDetections {
    pub id: String,
    pub image: String,
    pub width: u32,
    pub height: u32,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageFailure {
    pub image: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionsFile {
    pub schema_version: u32,
    pub images: Vec<ImageDetections>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<ImageFailure>,
}

impl DetectionsFile {
    pub fn new(images: Vec<ImageDetections>, errors: Vec<ImageFailure>) -> Self {
        Self { schema_version: DETECTIONS_SCHEMA_VERSION, images, errors }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("detections serialize") + "\n"
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: DetectionsFile =
            serde_json::from_str(&text).with_context(|| format!("parsing detections {}", path.display()))?;
        if file.schema_version != DETECTIONS_SCHEMA_VERSION {
            return Err(crate::exit::DataError(format!(
                "{}: unsupported detections schema version {}",
                path.display(),
                file.schema_version
            ))
            .into());
        }
        Ok(file)
    }
}
