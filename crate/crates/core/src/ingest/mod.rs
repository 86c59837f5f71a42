//! Ground truth, detection and feature-matrix ingestion.
//!
//! Ground truth and detections are JSON documents in a COCO-like layout.
//! Features come either from the `T2TFEAT` binary container or from CSV (see
//! [`features`]). Loaders reject invariant-violating records instead of
//! repairing them.

pub mod features;

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::hash::{Hash, Hasher};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub use features::{
    load_feature_matrix, parse_feature_csv, read_feature_binary, write_feature_binary,
    write_feature_csv, FeatureMatrix, FEATURE_MAGIC,
};

/// Record identifier. Input files may use JSON numbers or strings; equality
/// and ordering use the textual form, and numeric ids serialize back as
/// numbers.
#[derive(Clone)]
pub struct Id {
    text: String,
    numeric: bool,
}

impl Id {
    pub fn new(text: impl Into<String>) -> Self {
        Id {
            text: text.into(),
            numeric: false,
        }
    }

    pub fn numeric(n: u64) -> Self {
        Id {
            text: n.to_string(),
            numeric: true,
        }
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

impl PartialEq for Id {
    fn eq(&self, other: &Self) -> bool {
        self.text == other.text
    }
}

impl Eq for Id {}

impl Hash for Id {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.text.hash(state)
    }
}

impl PartialOrd for Id {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Id {
    fn cmp(&self, other: &Self) -> Ordering {
        self.text.cmp(&other.text)
    }
}

impl fmt::Debug for Id {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.text)
    }
}

impl fmt::Display for Id {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

impl From<&str> for Id {
    fn from(s: &str) -> Self {
        Id::new(s)
    }
}

impl From<u64> for Id {
    fn from(n: u64) -> Self {
        Id::numeric(n)
    }
}

impl Serialize for Id {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.numeric {
            if let Ok(n) = self.text.parse::<u64>() {
                return s.serialize_u64(n);
            }
        }
        s.serialize_str(&self.text)
    }
}

impl<'de> Deserialize<'de> for Id {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Unsigned(u64),
            Signed(i64),
            Text(String),
        }
        Ok(match Repr::deserialize(d)? {
            Repr::Unsigned(n) => Id::numeric(n),
            Repr::Signed(n) => Id {
                text: n.to_string(),
                numeric: true,
            },
            Repr::Text(t) => Id::new(t),
        })
    }
}

/// Axis-aligned box in pixels: left, top, width, height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, String> {
        if ![x, y, w, h].iter().all(|v| v.is_finite()) {
            return Err(format!("non-finite bbox [{x}, {y}, {w}, {h}]"));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(format!("bbox [{x}, {y}, {w}, {h}] has non-positive area"));
        }
        Ok(BoundingBox { x, y, w, h })
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn width(&self) -> f64 {
        self.w
    }

    pub fn height(&self) -> f64 {
        self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }
}

/// Feature vector of one instance; all entries finite, at least one entry.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self, String> {
        if values.is_empty() {
            return Err("feature vector is empty".into());
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(format!("feature entry {i} is not finite"));
        }
        Ok(FeatureVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageInfo {
    pub id: Id,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    /// Fields not interpreted by this crate, kept for round-tripping.
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthInstance {
    pub instance_id: Id,
    pub image_id: Id,
    pub bbox: BoundingBox,
    pub extra: Map<String, Value>,
}

/// Validated ground-truth annotations of one test set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruthSet {
    images: Vec<ImageInfo>,
    instances: Vec<GroundTruthInstance>,
    extra: Map<String, Value>,
}

impl GroundTruthSet {
    /// Checks id uniqueness and that every annotation names a known image.
    pub fn new(images: Vec<ImageInfo>, instances: Vec<GroundTruthInstance>) -> Result<Self> {
        Self::build(images, instances, Map::new(), "<memory>")
    }

    fn build(
        images: Vec<ImageInfo>,
        instances: Vec<GroundTruthInstance>,
        extra: Map<String, Value>,
        origin: &str,
    ) -> Result<Self> {
        let mut image_ids = HashSet::new();
        for (i, img) in images.iter().enumerate() {
            if !image_ids.insert(&img.id) {
                return Err(Error::validation(
                    origin,
                    format!("images[{i}] (id {})", img.id),
                    "duplicate image id",
                ));
            }
        }
        let mut seen = HashSet::new();
        for (i, inst) in instances.iter().enumerate() {
            let record = || format!("annotations[{i}] (id {})", inst.instance_id);
            if !seen.insert(&inst.instance_id) {
                return Err(Error::validation(origin, record(), "duplicate annotation id"));
            }
            if !image_ids.contains(&inst.image_id) {
                return Err(Error::validation(
                    origin,
                    record(),
                    format!("unknown image_id {}", inst.image_id),
                ));
            }
        }
        Ok(GroundTruthSet {
            images,
            instances,
            extra,
        })
    }

    pub fn images(&self) -> &[ImageInfo] {
        &self.images
    }

    pub fn instances(&self) -> &[GroundTruthInstance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Distinct image ids carrying at least one annotation.
    pub fn annotated_image_count(&self) -> usize {
        self.instances
            .iter()
            .map(|i| &i.image_id)
            .collect::<HashSet<_>>()
            .len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub detection_id: Id,
    pub image_id: Id,
    pub bbox: BoundingBox,
    /// Detector confidence in `[0, 1]`.
    pub score: f64,
    pub feature: Option<FeatureVector>,
    pub extra: Map<String, Value>,
}

impl Detection {
    pub fn new(
        detection_id: impl Into<Id>,
        image_id: impl Into<Id>,
        bbox: BoundingBox,
        score: f64,
    ) -> Self {
        Detection {
            detection_id: detection_id.into(),
            image_id: image_id.into(),
            bbox,
            score,
            feature: None,
            extra: Map::new(),
        }
    }

    pub fn with_feature(mut self, feature: FeatureVector) -> Self {
        self.feature = Some(feature);
        self
    }
}

/// Validated detector outputs: unique ids, scores in `[0, 1]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionSet {
    detections: Vec<Detection>,
}

impl DetectionSet {
    pub fn new(detections: Vec<Detection>) -> Result<Self> {
        Self::build(detections, "<memory>")
    }

    fn build(detections: Vec<Detection>, origin: &str) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut dim = None;
        for (i, d) in detections.iter().enumerate() {
            let record = || format!("detection[{i}] (id {})", d.detection_id);
            if !(0.0..=1.0).contains(&d.score) {
                return Err(Error::validation(
                    origin,
                    record(),
                    format!("score {} outside [0, 1]", d.score),
                ));
            }
            if !seen.insert(&d.detection_id) {
                return Err(Error::validation(origin, record(), "duplicate detection_id"));
            }
            if let Some(f) = &d.feature {
                match dim {
                    None => dim = Some(f.dim()),
                    Some(k) if k != f.dim() => {
                        return Err(Error::DimensionMismatch {
                            expected: k,
                            actual: f.dim(),
                        })
                    }
                    _ => {}
                }
            }
        }
        Ok(DetectionSet { detections })
    }

    pub fn as_slice(&self) -> &[Detection] {
        &self.detections
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Detection> {
        self.detections.iter()
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    pub fn into_inner(self) -> Vec<Detection> {
        self.detections
    }

    /// Ids of detections without a bound feature vector, in input order.
    pub fn unbound_ids(&self) -> Vec<String> {
        self.detections
            .iter()
            .filter(|d| d.feature.is_none())
            .map(|d| d.detection_id.to_string())
            .collect()
    }
}

// -- JSON layer -------------------------------------------------------------

/// Integral values are written as JSON integers so that round-tripping a
/// file with integer coordinates reproduces it.
fn json_number(v: f64) -> Value {
    if v.fract() == 0.0 && v.abs() < 9.0e15 {
        Value::from(v as i64)
    } else {
        Value::from(v)
    }
}

fn ser_num<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    json_number(*v).serialize(s)
}

fn ser_bbox<S: Serializer>(b: &[f64; 4], s: S) -> std::result::Result<S::Ok, S::Error> {
    b.iter()
        .map(|v| json_number(*v))
        .collect::<Vec<_>>()
        .serialize(s)
}

#[derive(Serialize, Deserialize)]
struct RawImage {
    id: Id,
    file_name: String,
    width: u32,
    height: u32,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

#[derive(Serialize, Deserialize)]
struct RawAnnotation {
    id: Id,
    image_id: Id,
    #[serde(serialize_with = "ser_bbox")]
    bbox: [f64; 4],
    #[serde(flatten)]
    extra: Map<String, Value>,
}

#[derive(Serialize, Deserialize)]
struct RawGroundTruth {
    images: Vec<RawImage>,
    annotations: Vec<RawAnnotation>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

#[derive(Serialize, Deserialize)]
struct RawDetection {
    detection_id: Id,
    image_id: Id,
    #[serde(serialize_with = "ser_bbox")]
    bbox: [f64; 4],
    #[serde(serialize_with = "ser_num")]
    score: f64,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_error(origin: &str, e: serde_json::Error) -> Error {
    Error::Parse {
        origin: origin.to_string(),
        message: e.to_string(),
    }
}

pub fn load_ground_truth(path: impl AsRef<Path>) -> Result<GroundTruthSet> {
    let path = path.as_ref();
    parse_ground_truth(&read_text(path)?, &path.display().to_string())
}

/// Parses a ground-truth document; `origin` names the source in errors.
pub fn parse_ground_truth(text: &str, origin: &str) -> Result<GroundTruthSet> {
    let raw: RawGroundTruth = serde_json::from_str(text).map_err(|e| parse_error(origin, e))?;
    let images = raw
        .images
        .into_iter()
        .map(|r| ImageInfo {
            id: r.id,
            file_name: r.file_name,
            width: r.width,
            height: r.height,
            extra: r.extra,
        })
        .collect();
    let instances = raw
        .annotations
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let [x, y, w, h] = r.bbox;
            let bbox = BoundingBox::new(x, y, w, h).map_err(|m| {
                Error::validation(origin, format!("annotations[{i}] (id {})", r.id), m)
            })?;
            Ok(GroundTruthInstance {
                instance_id: r.id,
                image_id: r.image_id,
                bbox,
                extra: r.extra,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    GroundTruthSet::build(images, instances, raw.extra, origin)
}

pub fn ground_truth_to_json(set: &GroundTruthSet) -> String {
    let raw = RawGroundTruth {
        images: set
            .images
            .iter()
            .map(|i| RawImage {
                id: i.id.clone(),
                file_name: i.file_name.clone(),
                width: i.width,
                height: i.height,
                extra: i.extra.clone(),
            })
            .collect(),
        annotations: set
            .instances
            .iter()
            .map(|a| RawAnnotation {
                id: a.instance_id.clone(),
                image_id: a.image_id.clone(),
                bbox: a.bbox.to_array(),
                extra: a.extra.clone(),
            })
            .collect(),
        extra: set.extra.clone(),
    };
    let mut s = serde_json::to_string_pretty(&raw).expect("ground truth serializes");
    s.push('\n');
    s
}

pub fn write_ground_truth(set: &GroundTruthSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, ground_truth_to_json(set)).map_err(|e| Error::io(path, e))
}

pub fn load_detections(path: impl AsRef<Path>) -> Result<DetectionSet> {
    let path = path.as_ref();
    parse_detections(&read_text(path)?, &path.display().to_string())
}

pub fn parse_detections(text: &str, origin: &str) -> Result<DetectionSet> {
    let raw: Vec<RawDetection> = serde_json::from_str(text).map_err(|e| parse_error(origin, e))?;
    let detections = raw
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let [x, y, w, h] = r.bbox;
            let bbox = BoundingBox::new(x, y, w, h).map_err(|m| {
                Error::validation(origin, format!("detection[{i}] (id {})", r.detection_id), m)
            })?;
            Ok(Detection {
                detection_id: r.detection_id,
                image_id: r.image_id,
                bbox,
                score: r.score,
                feature: None,
                extra: r.extra,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    DetectionSet::build(detections, origin)
}

/// Serializes detections; bound features are not part of this format.
pub fn detections_to_json(set: &DetectionSet) -> String {
    let raw: Vec<RawDetection> = set
        .iter()
        .map(|d| RawDetection {
            detection_id: d.detection_id.clone(),
            image_id: d.image_id.clone(),
            bbox: d.bbox.to_array(),
            score: d.score,
            extra: d.extra.clone(),
        })
        .collect();
    let mut s = serde_json::to_string_pretty(&raw).expect("detections serialize");
    s.push('\n');
    s
}

pub fn write_detections(set: &DetectionSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, detections_to_json(set)).map_err(|e| Error::io(path, e))
}

/// Outcome of [`bind_features`] besides the bound set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BindSummary {
    pub bound: usize,
    /// Feature rows whose id matched no detection.
    pub unused_rows: usize,
}

/// Attaches to every detection the feature row with the same id.
pub fn bind_features(
    dets: DetectionSet,
    feats: &FeatureMatrix,
) -> Result<(DetectionSet, BindSummary)> {
    let index: HashMap<&str, usize> = feats
        .row_ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let missing: Vec<String> = dets
        .iter()
        .filter(|d| !index.contains_key(d.detection_id.as_str()))
        .map(|d| d.detection_id.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Binding { missing });
    }
    let mut bound = dets.into_inner();
    for d in bound.iter_mut() {
        let row = feats.row(index[d.detection_id.as_str()]);
        d.feature = Some(FeatureVector(row.to_vec()));
    }
    let summary = BindSummary {
        bound: bound.len(),
        unused_rows: feats.rows() - bound.len(),
    };
    if summary.unused_rows > 0 {
        log::warn!("{} feature row(s) matched no detection", summary.unused_rows);
    }
    Ok((DetectionSet { detections: bound }, summary))
}
