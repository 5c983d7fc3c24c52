//! Annotation file formats.
//!
//! Pascal-VOC XML: one `<object>` per annotation with `<name>` and an
//! optional `<bndbox>` (`xmin`, `ymin`, `xmax`, `ymax`); `<size>` gives the
//! image dimensions used for bounds checks. `hand_no_fracture` objects may
//! omit the box.
//!
//! VOTT-style JSON:
//! `{"asset": {"name": ..., "size": {"width": W, "height": H}},
//!   "regions": [{"tags": ["fracture"], "boundingBox": {"left", "top", "width", "height"}}]}`.
//! Each region carries exactly one tag.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{validate_box, Annotation, DatasetError, Label};
use crate::geometry::BBox;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationFormat {
    #[default]
    VocXml,
    VottJson,
}

impl AnnotationFormat {
    pub fn from_extension(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "xml" => Some(Self::VocXml),
            "json" => Some(Self::VottJson),
            _ => None,
        }
    }
}

/// Parsed annotation file; dimensions are `None` when the file omits them.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationFile {
    pub width: Option<u32>,
    pub height: Option<u32>,
    pub annotations: Vec<Annotation>,
}

pub fn load_annotations(path: &Path, format: AnnotationFormat) -> Result<AnnotationFile, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io { path: path.into(), source })?;
    let name = path.display().to_string();
    match format {
        AnnotationFormat::VocXml => parse_voc_xml(&text, &name),
        AnnotationFormat::VottJson => parse_vott_json(&text, &name),
    }
}

fn parse_err(source: &str, message: impl Into<String>) -> DatasetError {
    DatasetError::Parse { path: source.into(), message: message.into() }
}

fn parse_label(raw: &str, record: &str) -> Result<Label, DatasetError> {
    raw.parse().map_err(|label| DatasetError::UnknownLabel { label, record: record.into() })
}

fn check_boxes(file: &AnnotationFile, records: &[String]) -> Result<(), DatasetError> {
    for (a, record) in file.annotations.iter().zip(records) {
        match a.bbox {
            Some(b) => {
                if !(b.x1 < b.x2 && b.y1 < b.y2) {
                    return Err(DatasetError::MalformedBox {
                        record: record.clone(),
                        x1: b.x1,
                        y1: b.y1,
                        x2: b.x2,
                        y2: b.y2,
                    });
                }
                if let (Some(w), Some(h)) = (file.width, file.height) {
                    validate_box(&b, record, w, h)?;
                }
            }
            None if a.label == Label::Fracture => {
                return Err(parse_err(record, "fracture annotation without a box"));
            }
            None => {}
        }
    }
    Ok(())
}

fn child<'a, 'i>(n: roxmltree::Node<'a, 'i>, tag: &str) -> Option<roxmltree::Node<'a, 'i>> {
    n.children().find(|c| c.has_tag_name(tag))
}

fn text_of<'a>(n: roxmltree::Node<'a, '_>, tag: &str) -> Option<&'a str> {
    child(n, tag).and_then(|c| c.text()).map(str::trim)
}

pub fn parse_voc_xml(text: &str, source: &str) -> Result<AnnotationFile, DatasetError> {
    let doc = roxmltree::Document::parse(text).map_err(|e| parse_err(source, e.to_string()))?;
    let root = doc.root_element();

    let (mut width, mut height) = (None, None);
    if let Some(size) = child(root, "size") {
        let dim = |tag: &str| -> Result<Option<u32>, DatasetError> {
            text_of(size, tag)
                .map(|t| {
                    t.parse::<f64>().map(|v| v as u32).map_err(|_| parse_err(source, format!("bad size/{tag}: {t:?}")))
                })
                .transpose()
        };
        width = dim("width")?;
        height = dim("height")?;
    }

    let mut annotations = Vec::new();
    let mut records = Vec::new();
    for (k, obj) in root.children().filter(|c| c.has_tag_name("object")).enumerate() {
        let record = format!("{source} object #{k}");
        let name = text_of(obj, "name").ok_or_else(|| parse_err(&record, "missing <name>"))?;
        let label = parse_label(name, &record)?;
        let bbox = match child(obj, "bndbox") {
            Some(bb) => {
                let coord = |tag: &str| -> Result<f64, DatasetError> {
                    let t = text_of(bb, tag).ok_or_else(|| parse_err(&record, format!("missing bndbox/{tag}")))?;
                    t.parse::<f64>().map_err(|_| parse_err(&record, format!("bad bndbox/{tag}: {t:?}")))
                };
                Some(BBox::new(coord("xmin")?, coord("ymin")?, coord("xmax")?, coord("ymax")?))
            }
            None => None,
        };
        annotations.push(Annotation { label, bbox });
        records.push(record);
    }
    let file = AnnotationFile { width, height, annotations };
    check_boxes(&file, &records)?;
    Ok(file)
}

#[derive(Deserialize)]
struct VottFile {
    #[serde(default)]
    asset: Option<VottAsset>,
    #[serde(default)]
    regions: Vec<VottRegion>,
}

#[derive(Deserialize)]
struct VottAsset {
    #[serde(default)]
    size: Option<VottSize>,
}

#[derive(Deserialize)]
struct VottSize {
    width: f64,
    height: f64,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct VottRegion {
    tags: Vec<String>,
    #[serde(default)]
    bounding_box: Option<VottRect>,
}

#[derive(Deserialize)]
struct VottRect {
    left: f64,
    top: f64,
    width: f64,
    height: f64,
}

pub fn parse_vott_json(text: &str, source: &str) -> Result<AnnotationFile, DatasetError> {
    let raw: VottFile = serde_json::from_str(text).map_err(|e| parse_err(source, e.to_string()))?;
    let size = raw.asset.and_then(|a| a.size);
    let mut annotations = Vec::new();
    let mut records = Vec::new();
    for (k, region) in raw.regions.into_iter().enumerate() {
        let record = format!("{source} region #{k}");
        let tag = match region.tags.as_slice() {
            [t] => t,
            _ => return Err(parse_err(&record, format!("expected exactly one tag, found {}", region.tags.len()))),
        };
        let label = parse_label(tag, &record)?;
        let bbox = region.bounding_box.map(|r| BBox::new(r.left, r.top, r.left + r.width, r.top + r.height));
        annotations.push(Annotation { label, bbox });
        records.push(record);
    }
    let file = AnnotationFile {
        width: size.as_ref().map(|s| s.width as u32),
        height: size.as_ref().map(|s| s.height as u32),
        annotations,
    };
    check_boxes(&file, &records)?;
    Ok(file)
}

/// Serializes annotations as Pascal-VOC XML.
pub fn write_voc_xml(filename: &str, width: u32, height: u32, annotations: &[Annotation]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "<annotation>");
    let _ = writeln!(s, "  <filename>{}</filename>", xml_escape(filename));
    let _ = writeln!(s, "  <size><width>{width}</width><height>{height}</height><depth>1</depth></size>");
    for a in annotations {
        let _ = writeln!(s, "  <object>");
        let _ = writeln!(s, "    <name>{}</name>", a.label);
        if let Some(b) = a.bbox {
            let _ = writeln!(
                s,
                "    <bndbox><xmin>{}</xmin><ymin>{}</ymin><xmax>{}</xmax><ymax>{}</ymax></bndbox>",
                b.x1, b.y1, b.x2, b.y2
            );
        }
        let _ = writeln!(s, "  </object>");
    }
    let _ = writeln!(s, "</annotation>");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
