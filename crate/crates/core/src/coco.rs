//! COCO annotation and detection-result files: data model, parsing, validation
//! and serialization.
//!
//! Ids are opaque integers; nothing assumes they are contiguous. Unknown JSON
//! fields (licenses, info, captions, ...) are ignored on input.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use thiserror::Error;

use crate::seg::{self, RunLengthEncoding, SegError};

pub type ImageId = u64;
pub type CategoryId = u64;
pub type AnnotationId = u64;

#[derive(Debug, Error)]
pub enum CocoError {
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("top-level field `{0}` is missing or not an array")]
    MissingArray(&'static str),
    #[error("{kind} #{index}{}: {message}", fmt_id(*.id))]
    BadRecord {
        kind: &'static str,
        index: usize,
        id: Option<u64>,
        message: String,
    },
    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: &'static str, id: u64 },
    #[error("{kind}{}: {field} {target} does not resolve", fmt_id(*.id))]
    DanglingReference {
        kind: &'static str,
        id: Option<u64>,
        field: &'static str,
        target: u64,
    },
    #[error("detection #{index}: score {score} outside [0, 1]")]
    InvalidScore { index: usize, score: f64 },
    #[error("annotation {id}: {source}")]
    Segmentation {
        id: AnnotationId,
        #[source]
        source: SegError,
    },
}

fn fmt_id(id: Option<u64>) -> String {
    id.map(|id| format!(" (id {id})")).unwrap_or_default()
}

/// Axis-aligned box `(x, y, w, h)` in pixels; serialized as `[x, y, w, h]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    /// Restricts the box to `[0, width] x [0, height]`.
    pub fn clip(&self, width: f64, height: f64) -> BBox {
        let x0 = self.x.clamp(0.0, width);
        let y0 = self.y.clamp(0.0, height);
        let x1 = self.right().clamp(0.0, width);
        let y1 = self.bottom().clamp(0.0, height);
        BBox::new(x0, y0, (x1 - x0).max(0.0), (y1 - y0).max(0.0))
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }
}

impl Serialize for BBox {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        [self.x, self.y, self.w, self.h].serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let [x, y, w, h] = <[f64; 4]>::deserialize(deserializer)?;
        Ok(BBox { x, y, w, h })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: CategoryId,
    pub name: String,
    #[serde(default)]
    pub supercategory: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub id: ImageId,
    pub width: u32,
    pub height: u32,
    pub file_name: String,
}

/// Instance segmentation: polygons (flat `x0 y0 x1 y1 ...` lists) or a run-length mask.
#[derive(Debug, Clone, PartialEq)]
pub enum Segmentation {
    Polygons(Vec<Vec<f64>>),
    Rle(RunLengthEncoding),
}

impl Default for Segmentation {
    fn default() -> Self {
        Segmentation::Polygons(Vec::new())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub id: AnnotationId,
    pub image_id: ImageId,
    pub category_id: CategoryId,
    pub bbox: BBox,
    pub area: f64,
    pub segmentation: Segmentation,
    pub iscrowd: bool,
}

/// One scored detector output, in COCO result-file form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: ImageId,
    pub category_id: CategoryId,
    pub bbox: BBox,
    pub score: f64,
}

/// Whether detections may reference images that are absent from the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReferenceMode {
    #[default]
    Strict,
    Lenient,
}

// --- wire forms -------------------------------------------------------------

#[derive(Deserialize, Serialize)]
#[serde(untagged)]
enum RawCounts {
    Compressed(String),
    Uncompressed(Vec<u32>),
}

#[derive(Deserialize, Serialize)]
#[serde(untagged)]
enum RawSegmentation {
    Polygons(Vec<Vec<f64>>),
    Rle { size: [u32; 2], counts: RawCounts },
}

fn crowd_flag<'de, D: Deserializer<'de>>(deserializer: D) -> Result<bool, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Flag {
        Bool(bool),
        Int(i64),
    }
    Ok(match Flag::deserialize(deserializer)? {
        Flag::Bool(b) => b,
        Flag::Int(i) => i != 0,
    })
}

#[derive(Deserialize)]
struct RawAnnotation {
    id: AnnotationId,
    image_id: ImageId,
    category_id: CategoryId,
    bbox: BBox,
    #[serde(default)]
    area: f64,
    #[serde(default)]
    segmentation: Option<RawSegmentation>,
    #[serde(default, deserialize_with = "crowd_flag")]
    iscrowd: bool,
}

#[derive(Serialize)]
struct AnnotationOut {
    id: AnnotationId,
    image_id: ImageId,
    category_id: CategoryId,
    bbox: BBox,
    area: f64,
    segmentation: RawSegmentation,
    iscrowd: u8,
}

#[derive(Serialize)]
struct DatasetOut<'a> {
    images: &'a [ImageInfo],
    annotations: Vec<AnnotationOut>,
    categories: &'a [Category],
}

impl RawAnnotation {
    fn into_annotation(self) -> Result<Annotation, CocoError> {
        let segmentation = match self.segmentation {
            None => Segmentation::default(),
            Some(RawSegmentation::Polygons(p)) => Segmentation::Polygons(p),
            Some(RawSegmentation::Rle { size: [h, w], counts }) => {
                let rle = match counts {
                    RawCounts::Compressed(s) => seg::rle_decode(&s, h, w),
                    RawCounts::Uncompressed(c) => RunLengthEncoding::new(h, w, c),
                }
                .map_err(|source| CocoError::Segmentation { id: self.id, source })?;
                Segmentation::Rle(rle)
            }
        };
        Ok(Annotation {
            id: self.id,
            image_id: self.image_id,
            category_id: self.category_id,
            bbox: self.bbox,
            area: self.area,
            segmentation,
            iscrowd: self.iscrowd,
        })
    }
}

fn record_array<'a>(root: &'a Value, key: &'static str) -> Result<&'a Vec<Value>, CocoError> {
    root.get(key)
        .and_then(Value::as_array)
        .ok_or(CocoError::MissingArray(key))
}

fn parse_records<T: for<'de> Deserialize<'de>>(
    records: &[Value],
    kind: &'static str,
) -> Result<Vec<T>, CocoError> {
    records
        .iter()
        .enumerate()
        .map(|(index, v)| {
            T::deserialize(v).map_err(|e| CocoError::BadRecord {
                kind,
                index,
                id: v.get("id").and_then(Value::as_u64),
                message: e.to_string(),
            })
        })
        .collect()
}

// --- dataset ----------------------------------------------------------------

/// A parsed annotation file. Immutable once built; lookups go through the
/// indexes built by [`Dataset::new`].
#[derive(Debug, Clone)]
pub struct Dataset {
    images: Vec<ImageInfo>,
    annotations: Vec<Annotation>,
    categories: Vec<Category>,
    image_index: HashMap<ImageId, usize>,
    category_index: HashMap<CategoryId, usize>,
    by_image: HashMap<ImageId, Vec<usize>>,
    by_category: HashMap<CategoryId, Vec<usize>>,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.images == other.images
            && self.annotations == other.annotations
            && self.categories == other.categories
    }
}

impl Dataset {
    /// Builds the indexes, rejecting duplicate ids and dangling references.
    pub fn new(
        images: Vec<ImageInfo>,
        annotations: Vec<Annotation>,
        categories: Vec<Category>,
    ) -> Result<Self, CocoError> {
        let mut image_index = HashMap::with_capacity(images.len());
        for (i, img) in images.iter().enumerate() {
            if image_index.insert(img.id, i).is_some() {
                return Err(CocoError::DuplicateId { kind: "image", id: img.id });
            }
        }
        let mut category_index = HashMap::with_capacity(categories.len());
        for (i, cat) in categories.iter().enumerate() {
            if category_index.insert(cat.id, i).is_some() {
                return Err(CocoError::DuplicateId { kind: "category", id: cat.id });
            }
        }
        let mut seen = HashSet::with_capacity(annotations.len());
        let mut by_image: HashMap<ImageId, Vec<usize>> = HashMap::new();
        let mut by_category: HashMap<CategoryId, Vec<usize>> = HashMap::new();
        for (i, ann) in annotations.iter().enumerate() {
            if !seen.insert(ann.id) {
                return Err(CocoError::DuplicateId { kind: "annotation", id: ann.id });
            }
            if !image_index.contains_key(&ann.image_id) {
                return Err(CocoError::DanglingReference {
                    kind: "annotation",
                    id: Some(ann.id),
                    field: "image_id",
                    target: ann.image_id,
                });
            }
            if !category_index.contains_key(&ann.category_id) {
                return Err(CocoError::DanglingReference {
                    kind: "annotation",
                    id: Some(ann.id),
                    field: "category_id",
                    target: ann.category_id,
                });
            }
            by_image.entry(ann.image_id).or_default().push(i);
            by_category.entry(ann.category_id).or_default().push(i);
        }
        Ok(Self {
            images,
            annotations,
            categories,
            image_index,
            category_index,
            by_image,
            by_category,
        })
    }

    pub fn empty() -> Self {
        Self::new(Vec::new(), Vec::new(), Vec::new()).expect("empty dataset is consistent")
    }

    pub fn images(&self) -> &[ImageInfo] {
        &self.images
    }

    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn image(&self, id: ImageId) -> Option<&ImageInfo> {
        self.image_index.get(&id).map(|&i| &self.images[i])
    }

    pub fn category(&self, id: CategoryId) -> Option<&Category> {
        self.category_index.get(&id).map(|&i| &self.categories[i])
    }

    pub fn category_by_name(&self, name: &str) -> Option<&Category> {
        self.categories.iter().find(|c| c.name == name)
    }

    /// Annotations of one image, in file order.
    pub fn annotations_for_image(&self, id: ImageId) -> impl Iterator<Item = &Annotation> {
        self.by_image
            .get(&id)
            .into_iter()
            .flatten()
            .map(move |&i| &self.annotations[i])
    }

    /// Annotations of one category, in file order.
    pub fn annotations_for_category(&self, id: CategoryId) -> impl Iterator<Item = &Annotation> {
        self.by_category
            .get(&id)
            .into_iter()
            .flatten()
            .map(move |&i| &self.annotations[i])
    }

    /// Category ids in ascending order.
    pub fn category_ids(&self) -> Vec<CategoryId> {
        let mut ids: Vec<_> = self.categories.iter().map(|c| c.id).collect();
        ids.sort_unstable();
        ids
    }
}

/// Parses a COCO annotation file.
pub fn parse_dataset(text: &str) -> Result<Dataset, CocoError> {
    let root: Value = serde_json::from_str(text)?;
    let images: Vec<ImageInfo> = parse_records(record_array(&root, "images")?, "image")?;
    let categories: Vec<Category> =
        parse_records(record_array(&root, "categories")?, "category")?;
    let raw: Vec<RawAnnotation> =
        parse_records(record_array(&root, "annotations")?, "annotation")?;
    let annotations = raw
        .into_iter()
        .map(RawAnnotation::into_annotation)
        .collect::<Result<Vec<_>, _>>()?;
    Dataset::new(images, annotations, categories)
}

/// Serializes a dataset as COCO JSON. RLE masks are always written compressed.
pub fn write_dataset(dataset: &Dataset) -> String {
    let annotations = dataset
        .annotations
        .iter()
        .map(|a| AnnotationOut {
            id: a.id,
            image_id: a.image_id,
            category_id: a.category_id,
            bbox: a.bbox,
            area: a.area,
            segmentation: match &a.segmentation {
                Segmentation::Polygons(p) => RawSegmentation::Polygons(p.clone()),
                Segmentation::Rle(rle) => RawSegmentation::Rle {
                    size: [rle.height(), rle.width()],
                    counts: RawCounts::Compressed(seg::encode_counts(rle.counts())),
                },
            },
            iscrowd: a.iscrowd as u8,
        })
        .collect();
    let out = DatasetOut {
        images: &dataset.images,
        annotations,
        categories: &dataset.categories,
    };
    serde_json::to_string(&out).expect("dataset serialization is infallible")
}

/// Parses a COCO result file and checks every record against `dataset`.
pub fn parse_detections(
    text: &str,
    dataset: &Dataset,
    mode: ReferenceMode,
) -> Result<Vec<Detection>, CocoError> {
    let root: Value = serde_json::from_str(text)?;
    let records = root.as_array().ok_or(CocoError::MissingArray("<root>"))?;
    let detections: Vec<Detection> = parse_records(records, "detection")?;
    for (index, det) in detections.iter().enumerate() {
        if dataset.category(det.category_id).is_none() {
            return Err(CocoError::DanglingReference {
                kind: "detection",
                id: Some(index as u64),
                field: "category_id",
                target: det.category_id,
            });
        }
        if mode == ReferenceMode::Strict && dataset.image(det.image_id).is_none() {
            return Err(CocoError::DanglingReference {
                kind: "detection",
                id: Some(index as u64),
                field: "image_id",
                target: det.image_id,
            });
        }
        if !(0.0..=1.0).contains(&det.score) {
            return Err(CocoError::InvalidScore { index, score: det.score });
        }
    }
    Ok(detections)
}

pub fn write_detections(detections: &[Detection]) -> String {
    serde_json::to_string(detections).expect("detection serialization is infallible")
}

/// Number of annotations per category; categories without annotations map to 0.
pub fn annotation_counts(dataset: &Dataset) -> BTreeMap<CategoryId, usize> {
    let mut counts: BTreeMap<CategoryId, usize> =
        dataset.categories.iter().map(|c| (c.id, 0)).collect();
    for ann in &dataset.annotations {
        *counts.entry(ann.category_id).or_default() += 1;
    }
    counts
}

// --- validation -------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Entity {
    Image,
    Category,
    Annotation,
}

impl fmt::Display for Entity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Entity::Image => "image",
            Entity::Category => "category",
            Entity::Annotation => "annotation",
        })
    }
}

/// A broken invariant. Violations are data, not failures.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub entity: Entity,
    pub id: u64,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}: {}", self.entity, self.id, self.rule)
    }
}

/// Checks every type invariant that parsing does not already enforce.
pub fn validate(dataset: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |entity, id, rule: String| out.push(Violation { entity, id, rule });

    for img in &dataset.images {
        if img.id == 0 {
            push(Entity::Image, img.id, "id must be positive".into());
        }
        if img.width == 0 || img.height == 0 {
            push(Entity::Image, img.id, format!("size {}x{} must be at least 1x1", img.width, img.height));
        }
    }

    let mut names = HashSet::new();
    for cat in &dataset.categories {
        if cat.id == 0 {
            push(Entity::Category, cat.id, "id must be positive".into());
        }
        if cat.name.is_empty() {
            push(Entity::Category, cat.id, "name must not be empty".into());
        } else if !names.insert(cat.name.as_str()) {
            push(Entity::Category, cat.id, format!("duplicate name `{}`", cat.name));
        }
    }

    for ann in &dataset.annotations {
        let b = ann.bbox;
        if ann.id == 0 {
            push(Entity::Annotation, ann.id, "id must be positive".into());
        }
        if b.w.is_nan() || b.w <= 0.0 {
            push(Entity::Annotation, ann.id, format!("bbox width {} must be > 0", b.w));
        }
        if b.h.is_nan() || b.h <= 0.0 {
            push(Entity::Annotation, ann.id, format!("bbox height {} must be > 0", b.h));
        }
        if b.x.is_nan() || b.y.is_nan() || b.x < 0.0 || b.y < 0.0 {
            push(Entity::Annotation, ann.id, format!("bbox origin ({}, {}) must be non-negative", b.x, b.y));
        }
        if let Some(img) = dataset.image(ann.image_id) {
            if b.right() > img.width as f64 || b.bottom() > img.height as f64 {
                push(
                    Entity::Annotation,
                    ann.id,
                    format!("bbox extends past image bounds {}x{} (clipped at evaluation)", img.width, img.height),
                );
            }
            if let Segmentation::Rle(rle) = &ann.segmentation {
                if rle.height() != img.height || rle.width() != img.width {
                    push(
                        Entity::Annotation,
                        ann.id,
                        format!(
                            "RLE size {}x{} differs from image size {}x{}",
                            rle.height(),
                            rle.width(),
                            img.height,
                            img.width
                        ),
                    );
                }
            }
        }
        if ann.area.is_nan() || ann.area <= 0.0 {
            push(Entity::Annotation, ann.id, format!("area {} must be > 0", ann.area));
        }
        match &ann.segmentation {
            Segmentation::Polygons(polys) => {
                if ann.iscrowd {
                    push(Entity::Annotation, ann.id, "crowd annotation must use RLE segmentation".into());
                }
                for (i, p) in polys.iter().enumerate() {
                    if p.len() < 6 || p.len() % 2 != 0 {
                        push(
                            Entity::Annotation,
                            ann.id,
                            format!("polygon {i} has {} coordinates (need an even count >= 6)", p.len()),
                        );
                    }
                }
            }
            Segmentation::Rle(_) => {}
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = r#"{
        "info": {"year": 2014},
        "licenses": [],
        "images": [
            {"id": 1, "width": 4, "height": 3, "file_name": "a.png"},
            {"id": 7, "width": 1, "height": 1, "file_name": "b.png", "coco_url": "x"}
        ],
        "categories": [{"id": 5, "name": "person", "supercategory": "person"}],
        "annotations": [
            {"id": 10, "image_id": 1, "category_id": 5, "bbox": [0, 0, 4, 3], "area": 12,
             "segmentation": [[0, 0, 4, 0, 4, 3, 0, 3]], "iscrowd": 0},
            {"id": 11, "image_id": 1, "category_id": 5, "bbox": [1, 1, 2, 1], "area": 2,
             "segmentation": [[1, 1, 3, 1, 3, 2, 1, 2]], "iscrowd": 0},
            {"id": 12, "image_id": 7, "category_id": 5, "bbox": [0, 0, 1, 1], "area": 1,
             "segmentation": {"size": [1, 1], "counts": "01"}, "iscrowd": 1}
        ]
    }"#;

    #[test]
    fn parses_hand_fixture() {
        let ds = parse_dataset(FIXTURE).unwrap();
        assert_eq!(
            (ds.images().len(), ds.categories().len(), ds.annotations().len()),
            (2, 1, 3)
        );
        let crowd = &ds.annotations()[2];
        assert!(crowd.iscrowd);
        match &crowd.segmentation {
            Segmentation::Rle(rle) => assert_eq!(rle.counts(), &[0, 1]),
            other => panic!("expected RLE, got {other:?}"),
        }
        assert!(!ds.annotations()[0].iscrowd);
        assert_eq!(ds.annotations()[1].bbox, BBox::new(1.0, 1.0, 2.0, 1.0));
        assert_eq!(ds.annotations_for_image(1).count(), 2);
        assert_eq!(ds.annotations_for_category(5).count(), 3);
        assert_eq!(ds.image(7).unwrap().file_name, "b.png");
        assert!(validate(&ds).is_empty());
    }

    #[test]
    fn parses_empty() {
        let ds = parse_dataset(r#"{"images":[],"annotations":[],"categories":[]}"#).unwrap();
        assert!(ds.images().is_empty() && ds.annotations().is_empty() && ds.categories().is_empty());
    }

    #[test]
    fn round_trip() {
        let ds = parse_dataset(FIXTURE).unwrap();
        let again = parse_dataset(&write_dataset(&ds)).unwrap();
        assert_eq!(ds, again);
    }

    #[test]
    fn uncompressed_rle_is_accepted() {
        let text = FIXTURE.replace(r#""counts": "01""#, r#""counts": [0, 1]"#);
        let ds = parse_dataset(&text).unwrap();
        assert!(write_dataset(&ds).contains(r#""counts":"01""#));
    }

    #[test]
    fn rejects_malformed_inputs() {
        assert!(matches!(parse_dataset("{"), Err(CocoError::Json(_))));
        assert!(matches!(
            parse_dataset(r#"{"images":[],"annotations":[]}"#),
            Err(CocoError::MissingArray("categories"))
        ));
        let dup = FIXTURE.replace(r#""id": 7,"#, r#""id": 1,"#);
        assert!(matches!(
            parse_dataset(&dup),
            Err(CocoError::DuplicateId { kind: "image", id: 1 })
        ));
        let dangling = FIXTURE.replace(r#""image_id": 7"#, r#""image_id": 99"#);
        let err = parse_dataset(&dangling).unwrap_err();
        assert!(matches!(err, CocoError::DanglingReference { target: 99, .. }));
        assert!(err.to_string().contains("id 12"), "{err}");
        let missing = FIXTURE.replace(r#""bbox": [1, 1, 2, 1], "#, "");
        let err = parse_dataset(&missing).unwrap_err();
        assert!(matches!(err, CocoError::BadRecord { id: Some(11), .. }), "{err}");
        let bad_rle = FIXTURE.replace(r#""counts": "01""#, r#""counts": "02""#);
        assert!(matches!(
            parse_dataset(&bad_rle),
            Err(CocoError::Segmentation { id: 12, .. })
        ));
    }

    #[test]
    fn detections() {
        let ds = parse_dataset(FIXTURE).unwrap();
        assert!(parse_detections("[]", &ds, ReferenceMode::Strict).unwrap().is_empty());
        let one = r#"[{"image_id": 1, "category_id": 5, "bbox": [10, 10, 20, 30], "score": 0.9}]"#;
        let dets = parse_detections(one, &ds, ReferenceMode::Strict).unwrap();
        assert_eq!(
            dets,
            vec![Detection {
                image_id: 1,
                category_id: 5,
                bbox: BBox::new(10.0, 10.0, 20.0, 30.0),
                score: 0.9
            }]
        );
        let bad_cat = one.replace(r#""category_id": 5"#, r#""category_id": 42"#);
        let err = parse_detections(&bad_cat, &ds, ReferenceMode::Lenient).unwrap_err();
        assert!(err.to_string().contains("42"), "{err}");
        let bad_score = one.replace("0.9", "1.5");
        assert!(matches!(
            parse_detections(&bad_score, &ds, ReferenceMode::Strict),
            Err(CocoError::InvalidScore { index: 0, .. })
        ));
        let other_image = one.replace(r#""image_id": 1"#, r#""image_id": 3"#);
        assert!(parse_detections(&other_image, &ds, ReferenceMode::Strict).is_err());
        assert_eq!(
            parse_detections(&other_image, &ds, ReferenceMode::Lenient).unwrap().len(),
            1
        );
    }

    #[test]
    fn counts_include_absent_categories() {
        let text = FIXTURE.replace(
            r#""categories": [{"id": 5, "name": "person", "supercategory": "person"}]"#,
            r#""categories": [{"id": 5, "name": "person"}, {"id": 6, "name": "dog"}]"#,
        );
        let ds = parse_dataset(&text).unwrap();
        let counts = annotation_counts(&ds);
        assert_eq!(counts, BTreeMap::from([(5, 3), (6, 0)]));
        assert_eq!(counts.values().sum::<usize>(), ds.annotations().len());
        assert!(annotation_counts(&Dataset::empty()).is_empty());
    }

    #[test]
    fn validate_reports_zero_width_box() {
        let text = FIXTURE.replace(r#""bbox": [1, 1, 2, 1]"#, r#""bbox": [1, 1, 0, 1]"#);
        let v = validate(&parse_dataset(&text).unwrap());
        assert_eq!(v.len(), 1);
        assert_eq!((v[0].entity, v[0].id), (Entity::Annotation, 11));
    }

    #[test]
    fn validate_reports_crowd_polygon() {
        let ds = parse_dataset(FIXTURE).unwrap();
        let mut anns = ds.annotations().to_vec();
        anns[1].iscrowd = true;
        let ds = Dataset::new(ds.images().to_vec(), anns, ds.categories().to_vec()).unwrap();
        let v = validate(&ds);
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(v[0].rule.contains("crowd"));
    }

    #[test]
    fn validate_flags_out_of_bounds_box() {
        let text = FIXTURE.replace(r#""bbox": [1, 1, 2, 1]"#, r#""bbox": [3, 1, 2, 1]"#);
        let v = validate(&parse_dataset(&text).unwrap());
        assert_eq!(v.len(), 1);
        assert!(v[0].rule.contains("past image bounds"));
    }

    #[test]
    fn clip_and_intersection() {
        let b = BBox::new(-1.0, 2.0, 4.0, 4.0).clip(2.0, 3.0);
        assert_eq!(b, BBox::new(0.0, 2.0, 2.0, 1.0));
        let a = BBox::new(0.0, 0.0, 2.0, 2.0);
        assert_eq!(a.intersection_area(&BBox::new(1.0, 1.0, 2.0, 2.0)), 1.0);
        assert_eq!(a.intersection_area(&BBox::new(2.0, 0.0, 2.0, 2.0)), 0.0);
    }
}
