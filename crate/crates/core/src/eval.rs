//! COCO-style bbox Average Precision, per category, averaged over IoU
//! thresholds 0.50:0.05:0.95 with 101-point interpolated precision.
//!
//! Only the "all" area range and a single `max_dets` are evaluated. Crowd
//! ground truth acts as an ignore region: a detection that matches no regular
//! ground truth but is covered by a crowd box is dropped rather than counted
//! as a false positive.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::io;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coco::{AnnotationId, BBox, CategoryId, Dataset, Detection, ImageId};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("detection #{index}: unknown category {category_id}")]
    UnknownCategory { index: usize, category_id: CategoryId },
    #[error("detection #{index}: score {score} outside [0, 1]")]
    InvalidScore { index: usize, score: f64 },
    #[error("malformed evaluation file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalParams {
    pub iou_thresholds: Vec<f64>,
    pub recall_thresholds: Vec<f64>,
    pub max_dets: usize,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            iou_thresholds: (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect(),
            recall_thresholds: (0..=100).map(|i| i as f64 / 100.0).collect(),
            max_dets: 100,
        }
    }
}

impl EvalParams {
    pub fn validate(&self) -> Result<(), EvalError> {
        for (name, t) in [("iou", &self.iou_thresholds), ("recall", &self.recall_thresholds)] {
            if t.is_empty() {
                return Err(EvalError::Params(format!("{name} thresholds are empty")));
            }
            if t.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(EvalError::Params(format!("{name} thresholds must lie in [0, 1]")));
            }
            if t.windows(2).any(|w| w[0] >= w[1]) {
                return Err(EvalError::Params(format!("{name} thresholds must be strictly increasing")));
            }
        }
        if self.max_dets == 0 {
            return Err(EvalError::Params("max_dets must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryEval {
    pub category_id: CategoryId,
    pub category_name: String,
    /// `None` iff the category has no non-crowd ground truth.
    pub ap: Option<f64>,
    /// AP at each IoU threshold; empty when `ap` is undefined.
    #[serde(default)]
    pub ap_per_iou: Vec<f64>,
    pub num_gt: usize,
    pub num_dets: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub params: EvalParams,
    pub per_category: Vec<CategoryEval>,
    /// Mean over categories with a defined AP; `None` when there are none.
    pub map: Option<f64>,
}

impl EvalResult {
    pub fn category(&self, id: CategoryId) -> Option<&CategoryEval> {
        self.per_category.iter().find(|c| c.category_id == id)
    }

    pub fn ap(&self, id: CategoryId) -> Option<f64> {
        self.category(id).and_then(|c| c.ap)
    }

    /// CSV with columns `category_id,category_name,num_gt,num_dets,ap` and a
    /// trailing `map` row. Undefined APs are left blank.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["category_id", "category_name", "num_gt", "num_dets", "ap"])
            .expect("in-memory write");
        let fmt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for c in &self.per_category {
            w.write_record([
                c.category_id.to_string(),
                c.category_name.clone(),
                c.num_gt.to_string(),
                c.num_dets.to_string(),
                fmt(c.ap),
            ])
            .expect("in-memory write");
        }
        let num_gt: usize = self.per_category.iter().map(|c| c.num_gt).sum();
        let num_dets: usize = self.per_category.iter().map(|c| c.num_dets).sum();
        w.write_record(["map".to_string(), String::new(), num_gt.to_string(), num_dets.to_string(), fmt(self.map)])
            .expect("in-memory write");
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }

    /// Reads the CSV written by [`EvalResult::to_csv`]. Parameters are not
    /// stored in the CSV and come back as defaults; per-threshold APs are lost.
    pub fn from_csv(text: &str) -> Result<Self, EvalError> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let mut per_category = Vec::new();
        let mut map = None;
        let bad = |e: &dyn std::fmt::Display| EvalError::Format(e.to_string());
        let opt = |s: &str| -> Result<Option<f64>, EvalError> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|e| bad(&e))
            }
        };
        for rec in r.records() {
            let rec = rec.map_err(|e| bad(&e))?;
            if rec.len() != 5 {
                return Err(EvalError::Format(format!("expected 5 columns, got {}", rec.len())));
            }
            if &rec[0] == "map" {
                map = opt(&rec[4])?;
                continue;
            }
            per_category.push(CategoryEval {
                category_id: rec[0].parse().map_err(|e| bad(&e))?,
                category_name: rec[1].to_string(),
                num_gt: rec[2].parse().map_err(|e| bad(&e))?,
                num_dets: rec[3].parse().map_err(|e| bad(&e))?,
                ap: opt(&rec[4])?,
                ap_per_iou: Vec::new(),
            });
        }
        Ok(Self { params: EvalParams::default(), per_category, map })
    }
}

/// Intersection over union; 0 when the union is empty.
pub fn bbox_iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Fraction of the detection covered by a crowd region.
pub fn crowd_iou(det: &BBox, crowd: &BBox) -> f64 {
    let area = det.area();
    if area <= 0.0 {
        0.0
    } else {
        det.intersection_area(crowd) / area
    }
}

/// Ground truth as seen by the matcher.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtBox {
    pub id: AnnotationId,
    pub bbox: BBox,
    pub iscrowd: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredBox {
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchLabel {
    TruePositive(AnnotationId),
    FalsePositive,
    Ignored,
}

/// A detection kept after sorting and truncation, with the position it had in
/// the input slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedDetection {
    pub index: usize,
    pub score: f64,
    pub label: MatchLabel,
}

fn by_score_desc(a: f64, b: f64) -> Ordering {
    b.partial_cmp(&a).unwrap_or(Ordering::Equal)
}

/// Greedy matching of one (image, category) cell at one IoU threshold.
///
/// Detections are visited by descending score (stable, so ties keep input
/// order) and truncated to `max_dets`. Each takes the still-unmatched regular
/// ground truth with the highest IoU `>= iou_thr`, the earliest one winning
/// ties. Unmatched detections covered by a crowd region with
/// `crowd_iou >= iou_thr` are ignored, the rest are false positives.
pub fn match_detections(
    gts: &[GtBox],
    dets: &[ScoredBox],
    iou_thr: f64,
    max_dets: usize,
) -> Vec<MatchedDetection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| by_score_desc(dets[a].score, dets[b].score));
    order.truncate(max_dets);

    let mut taken = vec![false; gts.len()];
    order
        .into_iter()
        .map(|index| {
            let det = &dets[index];
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if gt.iscrowd || taken[g] {
                    continue;
                }
                let iou = bbox_iou(&det.bbox, &gt.bbox);
                if iou >= iou_thr && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            let label = match best {
                Some((g, _)) => {
                    taken[g] = true;
                    MatchLabel::TruePositive(gts[g].id)
                }
                None if gts
                    .iter()
                    .any(|gt| gt.iscrowd && crowd_iou(&det.bbox, &gt.bbox) >= iou_thr) =>
                {
                    MatchLabel::Ignored
                }
                None => MatchLabel::FalsePositive,
            };
            MatchedDetection { index, score: det.score, label }
        })
        .collect()
}

/// Interpolated AP of a score-ordered label sequence. Ignored detections are
/// skipped. Returns `None` when `num_gt == 0`.
pub fn average_precision(labels: &[MatchLabel], num_gt: usize, recall_thresholds: &[f64]) -> Option<f64> {
    if num_gt == 0 {
        return None;
    }
    let mut recall = Vec::with_capacity(labels.len());
    let mut precision = Vec::with_capacity(labels.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for label in labels {
        match label {
            MatchLabel::TruePositive(_) => tp += 1,
            MatchLabel::FalsePositive => fp += 1,
            MatchLabel::Ignored => continue,
        }
        recall.push(tp as f64 / num_gt as f64);
        precision.push(if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 });
    }
    // envelope: non-increasing from high recall to low
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut sum = 0.0;
    let mut cursor = 0;
    for &r in recall_thresholds {
        while cursor < recall.len() && recall[cursor] < r {
            cursor += 1;
        }
        if cursor < recall.len() {
            sum += precision[cursor];
        }
    }
    Some(sum / recall_thresholds.len() as f64)
}

struct Cell {
    gts: Vec<GtBox>,
    dets: Vec<ScoredBox>,
    /// position of each detection in the caller's list, for global tie-breaks
    det_order: Vec<usize>,
}

/// Evaluates detections against the dataset's ground truth.
///
/// Boxes are clipped to their image before matching. Detections on images
/// the dataset does not contain (accepted in lenient parsing) are skipped.
pub fn evaluate(dataset: &Dataset, detections: &[Detection], params: &EvalParams) -> Result<EvalResult, EvalError> {
    params.validate()?;
    for (index, det) in detections.iter().enumerate() {
        if dataset.category(det.category_id).is_none() {
            return Err(EvalError::UnknownCategory { index, category_id: det.category_id });
        }
        if !(0.0..=1.0).contains(&det.score) {
            return Err(EvalError::InvalidScore { index, score: det.score });
        }
    }

    let mut cells: HashMap<(CategoryId, ImageId), Cell> = HashMap::new();
    let new_cell = || Cell { gts: Vec::new(), dets: Vec::new(), det_order: Vec::new() };
    for ann in dataset.annotations() {
        let img = dataset.image(ann.image_id).expect("dataset integrity");
        cells.entry((ann.category_id, ann.image_id)).or_insert_with(new_cell).gts.push(GtBox {
            id: ann.id,
            bbox: ann.bbox.clip(img.width as f64, img.height as f64),
            iscrowd: ann.iscrowd,
        });
    }
    for (i, det) in detections.iter().enumerate() {
        let Some(img) = dataset.image(det.image_id) else {
            continue;
        };
        let cell = cells.entry((det.category_id, det.image_id)).or_insert_with(new_cell);
        cell.dets.push(ScoredBox {
            bbox: det.bbox.clip(img.width as f64, img.height as f64),
            score: det.score,
        });
        cell.det_order.push(i);
    }

    let mut by_category: HashMap<CategoryId, Vec<&Cell>> = HashMap::new();
    let mut keys: Vec<_> = cells.keys().copied().collect();
    keys.sort_unstable();
    for key in keys {
        by_category.entry(key.0).or_default().push(&cells[&key]);
    }

    let categories = dataset.category_ids();
    let per_category: Vec<CategoryEval> = categories
        .par_iter()
        .map(|&cat| {
            let name = dataset.category(cat).map(|c| c.name.clone()).unwrap_or_default();
            let cat_cells = by_category.get(&cat).map(Vec::as_slice).unwrap_or(&[]);
            evaluate_category(cat, name, cat_cells, params)
        })
        .collect();

    let defined: Vec<f64> = per_category.iter().filter_map(|c| c.ap).collect();
    let map = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(EvalResult { params: params.clone(), per_category, map })
}

fn evaluate_category(category_id: CategoryId, category_name: String, cells: &[&Cell], params: &EvalParams) -> CategoryEval {
    let num_gt: usize = cells.iter().map(|c| c.gts.iter().filter(|g| !g.iscrowd).count()).sum();
    let num_dets: usize = cells.iter().map(|c| c.dets.len().min(params.max_dets)).sum();
    if num_gt == 0 {
        return CategoryEval { category_id, category_name, ap: None, ap_per_iou: Vec::new(), num_gt, num_dets };
    }
    let ap_per_iou: Vec<f64> = params
        .iou_thresholds
        .iter()
        .map(|&thr| {
            // (score, input position, label) pooled over images
            let mut pooled: Vec<(f64, usize, MatchLabel)> = Vec::new();
            for cell in cells {
                for m in match_detections(&cell.gts, &cell.dets, thr, params.max_dets) {
                    pooled.push((m.score, cell.det_order[m.index], m.label));
                }
            }
            pooled.sort_by(|a, b| by_score_desc(a.0, b.0).then(a.1.cmp(&b.1)));
            let labels: Vec<MatchLabel> = pooled.into_iter().map(|p| p.2).collect();
            average_precision(&labels, num_gt, &params.recall_thresholds).expect("num_gt > 0")
        })
        .collect();
    let ap = ap_per_iou.iter().sum::<f64>() / ap_per_iou.len() as f64;
    CategoryEval { category_id, category_name, ap: Some(ap), ap_per_iou, num_gt, num_dets }
}
