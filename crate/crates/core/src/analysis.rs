//! Compares masked-dataset evaluations with the baseline.
//!
//! "AP change" is the ratio `100 * AP_masked / AP_baseline`: ~100% means
//! masking had no effect, ~0% a collapse. Deviation is `|change - 100|`, so
//! masks that help a category rank alongside masks that hurt it. Rankings use
//! unrounded values; rounding happens only when rendering.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coco::{annotation_counts, CategoryId, Dataset};
use crate::eval::EvalResult;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("category {0}: baseline AP is undefined or zero")]
    UndefinedBaseline(CategoryId),
    #[error("category {0}: no self-masked evaluation")]
    MissingSelfEntry(CategoryId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextEntry {
    pub target_category_id: CategoryId,
    pub masked_category_id: CategoryId,
    pub baseline_ap: f64,
    pub masked_ap: f64,
    pub change_pct: f64,
    pub deviation: f64,
    pub is_self: bool,
}

/// `100 * masked / baseline`; `None` when the baseline AP is 0.
pub fn change_pct(baseline_ap: f64, masked_ap: f64) -> Option<f64> {
    // ratio first, so equal APs give exactly 100
    (baseline_ap > 0.0).then(|| 100.0 * (masked_ap / baseline_ap))
}

fn by_deviation(a: &ContextEntry, b: &ContextEntry) -> Ordering {
    b.deviation
        .total_cmp(&a.deviation)
        .then(a.masked_category_id.cmp(&b.masked_category_id))
}

/// One entry per masked evaluation in which the target's AP is defined,
/// sorted by deviation (largest first, ties by masked category id).
pub fn context_entries(
    target: CategoryId,
    baseline: &EvalResult,
    masked: &BTreeMap<CategoryId, EvalResult>,
) -> Result<Vec<ContextEntry>, AnalysisError> {
    let baseline_ap = baseline
        .ap(target)
        .filter(|&ap| ap > 0.0)
        .ok_or(AnalysisError::UndefinedBaseline(target))?;
    let mut entries: Vec<ContextEntry> = masked
        .iter()
        .filter_map(|(&masked_id, result)| {
            let masked_ap = result.ap(target)?;
            let change = change_pct(baseline_ap, masked_ap)?;
            Some(ContextEntry {
                target_category_id: target,
                masked_category_id: masked_id,
                baseline_ap,
                masked_ap,
                change_pct: change,
                deviation: (change - 100.0).abs(),
                is_self: masked_id == target,
            })
        })
        .collect();
    entries.sort_by(by_deviation);
    Ok(entries)
}

/// The `k` masked datasets that moved the target's AP the most.
pub fn top_k_context(
    target: CategoryId,
    baseline: &EvalResult,
    masked: &BTreeMap<CategoryId, EvalResult>,
    k: usize,
) -> Result<Vec<ContextEntry>, AnalysisError> {
    let mut entries = context_entries(target, baseline, masked)?;
    entries.truncate(k);
    Ok(entries)
}

fn strongest_context(entries: &[ContextEntry]) -> Option<&ContextEntry> {
    entries
        .iter()
        .filter(|e| !e.is_self)
        .min_by(|a, b| {
            a.change_pct
                .total_cmp(&b.change_pct)
                .then(a.masked_category_id.cmp(&b.masked_category_id))
        })
}

/// True iff masking some other category lowers the target's AP strictly more
/// than masking the target itself. False when there is no other category.
pub fn context_dominant(target: CategoryId, entries: &[ContextEntry]) -> Result<bool, AnalysisError> {
    let own: Vec<&ContextEntry> = entries.iter().filter(|e| e.target_category_id == target).collect();
    let self_change = own
        .iter()
        .find(|e| e.is_self)
        .ok_or(AnalysisError::MissingSelfEntry(target))?
        .change_pct;
    Ok(own.iter().any(|e| !e.is_self && e.change_pct < self_change))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSummary {
    pub category_id: CategoryId,
    pub category_name: String,
    pub baseline_ap: f64,
    pub top: Vec<ContextEntry>,
    pub self_change_pct: Option<f64>,
    /// Non-self entry with the lowest change.
    pub strongest_context: Option<ContextEntry>,
    pub context_dominant: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub category_id: CategoryId,
    pub category_name: String,
    pub annotation_count: usize,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub top_k: usize,
    pub baseline: EvalResult,
    pub entries: Vec<ContextEntry>,
    pub targets: Vec<TargetSummary>,
    pub annotation_counts: BTreeMap<CategoryId, usize>,
    pub scatter: Vec<ScatterRow>,
    pub notices: Vec<String>,
}

impl AnalysisReport {
    pub fn category_name(&self, id: CategoryId) -> String {
        self.baseline
            .category(id)
            .map(|c| c.category_name.clone())
            .unwrap_or_else(|| id.to_string())
    }

    pub fn target(&self, id: CategoryId) -> Option<&TargetSummary> {
        self.targets.iter().find(|t| t.category_id == id)
    }

    /// Flattened entries, one CSV row per (target, masked) pair.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "target_category_id",
            "target_name",
            "masked_category_id",
            "masked_name",
            "baseline_ap",
            "masked_ap",
            "change_pct",
            "deviation",
            "is_self",
        ])
        .expect("in-memory write");
        for e in &self.entries {
            w.write_record([
                e.target_category_id.to_string(),
                self.category_name(e.target_category_id),
                e.masked_category_id.to_string(),
                self.category_name(e.masked_category_id),
                e.baseline_ap.to_string(),
                e.masked_ap.to_string(),
                e.change_pct.to_string(),
                e.deviation.to_string(),
                e.is_self.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }
}

/// Builds the full report. Targets whose baseline AP is undefined or zero
/// are left out and listed in `notices`.
pub fn analyze(
    baseline: &EvalResult,
    masked: &BTreeMap<CategoryId, EvalResult>,
    dataset: &Dataset,
    top_k: usize,
) -> AnalysisReport {
    let mut entries = Vec::new();
    let mut targets = Vec::new();
    let mut notices = Vec::new();
    for cat in &baseline.per_category {
        let id = cat.category_id;
        let all = match context_entries(id, baseline, masked) {
            Ok(all) => all,
            Err(e) => {
                notices.push(format!("{} excluded: {e}", cat.category_name));
                continue;
            }
        };
        let dominant = match context_dominant(id, &all) {
            Ok(d) => Some(d),
            Err(e) => {
                notices.push(format!("{}: dominance undefined: {e}", cat.category_name));
                None
            }
        };
        targets.push(TargetSummary {
            category_id: id,
            category_name: cat.category_name.clone(),
            baseline_ap: all.first().map(|e| e.baseline_ap).or(cat.ap).unwrap_or(0.0),
            top: all.iter().take(top_k).cloned().collect(),
            self_change_pct: all.iter().find(|e| e.is_self).map(|e| e.change_pct),
            strongest_context: strongest_context(&all).cloned(),
            context_dominant: dominant,
        });
        entries.extend(all);
    }
    let mut report = AnalysisReport {
        top_k,
        baseline: baseline.clone(),
        entries,
        targets,
        annotation_counts: annotation_counts(dataset),
        scatter: Vec::new(),
        notices,
    };
    report.scatter = scatter_data(&report, dataset);
    report
}

/// Targets ordered by how far their most harmful context mask drops AP
/// (lowest non-self change first, ties by id), truncated to `n`.
pub fn rank_context_dependent(report: &AnalysisReport, n: usize) -> Vec<CategoryId> {
    let mut ranked: Vec<(f64, CategoryId)> = report
        .targets
        .iter()
        .filter_map(|t| Some((t.strongest_context.as_ref()?.change_pct, t.category_id)))
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    ranked.into_iter().take(n).map(|(_, id)| id).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopAccuracyRow {
    pub category_id: CategoryId,
    pub category_name: String,
    pub baseline_ap: f64,
    pub top: Vec<ContextEntry>,
}

/// The `n` most accurate targets by baseline AP, each with its top-3 masks.
pub fn top_accuracy_table(report: &AnalysisReport, n: usize) -> Vec<TopAccuracyRow> {
    let mut rows: Vec<&TargetSummary> = report.targets.iter().collect();
    rows.sort_by(|a, b| b.baseline_ap.total_cmp(&a.baseline_ap).then(a.category_id.cmp(&b.category_id)));
    rows.into_iter()
        .take(n)
        .map(|t| TopAccuracyRow {
            category_id: t.category_id,
            category_name: t.category_name.clone(),
            baseline_ap: t.baseline_ap,
            top: t.top.iter().take(3).cloned().collect(),
        })
        .collect()
}

/// (category, annotation count, baseline AP) for every category with a defined AP.
pub fn scatter_data(report: &AnalysisReport, dataset: &Dataset) -> Vec<ScatterRow> {
    let counts = annotation_counts(dataset);
    report
        .baseline
        .per_category
        .iter()
        .filter(|c| c.num_gt > 0)
        .filter_map(|c| {
            Some(ScatterRow {
                category_id: c.category_id,
                category_name: c.category_name.clone(),
                annotation_count: *counts.get(&c.category_id)?,
                ap: c.ap?,
            })
        })
        .collect()
}
