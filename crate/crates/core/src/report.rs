//! Renders an [`AnalysisReport`] as Markdown or CSV tables: top-accuracy
//! categories, context-dependent categories and the AP/annotation scatter
//! data. Percentages are shown with one decimal; a `*` after a cell marks
//! the context mask that hurt a category more than masking the category
//! itself.

use crate::analysis::{rank_context_dependent, top_accuracy_table, AnalysisReport, ContextEntry, TargetSummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReportOptions {
    /// Rows of the top-accuracy table.
    pub accuracy_rows: usize,
    /// Rows of the context-dependence table.
    pub context_rows: usize,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self { accuracy_rows: 10, context_rows: 15 }
    }
}

struct Row {
    table: &'static str,
    category_id: u64,
    name: String,
    ap: f64,
    annotations: Option<usize>,
    cells: Vec<String>,
}

fn entry_cell(report: &AnalysisReport, entry: &ContextEntry, marked: bool) -> String {
    format!(
        "{} ({:.1}%){}",
        report.category_name(entry.masked_category_id),
        entry.change_pct,
        if marked { "*" } else { "" }
    )
}

fn is_marked(target: &TargetSummary, entry: &ContextEntry) -> bool {
    target.context_dominant == Some(true)
        && target
            .strongest_context
            .as_ref()
            .is_some_and(|s| s.masked_category_id == entry.masked_category_id)
}

fn top_cells(report: &AnalysisReport, target: &TargetSummary, entries: &[ContextEntry]) -> Vec<String> {
    entries.iter().map(|e| entry_cell(report, e, is_marked(target, e))).collect()
}

fn collect_rows(report: &AnalysisReport, options: &ReportOptions) -> Vec<Row> {
    let mut rows = Vec::new();
    for r in top_accuracy_table(report, options.accuracy_rows) {
        let target = report.target(r.category_id).expect("row comes from a target");
        rows.push(Row {
            table: "top_accuracy",
            category_id: r.category_id,
            name: r.category_name.clone(),
            ap: r.baseline_ap,
            annotations: None,
            cells: top_cells(report, target, &r.top),
        });
    }
    for id in rank_context_dependent(report, options.context_rows) {
        let target = report.target(id).expect("ranked id comes from a target");
        let top: Vec<ContextEntry> = target.top.iter().take(3).cloned().collect();
        rows.push(Row {
            table: "context_dependence",
            category_id: id,
            name: target.category_name.clone(),
            ap: target.baseline_ap,
            annotations: None,
            cells: top_cells(report, target, &top),
        });
    }
    for s in &report.scatter {
        rows.push(Row {
            table: "scatter",
            category_id: s.category_id,
            name: s.category_name.clone(),
            ap: s.ap,
            annotations: Some(s.annotation_count),
            cells: Vec::new(),
        });
    }
    rows
}

fn markdown_table(out: &mut String, header: &[&str], rows: impl Iterator<Item = Vec<String>>) {
    out.push_str(&format!("| {} |\n", header.join(" | ")));
    out.push_str(&format!("|{}\n", "---|".repeat(header.len())));
    for mut cells in rows {
        cells.resize(header.len(), String::new());
        out.push_str(&format!("| {} |\n", cells.join(" | ")));
    }
}

pub fn render(report: &AnalysisReport, format: ReportFormat, options: &ReportOptions) -> String {
    let rows = collect_rows(report, options);
    match format {
        ReportFormat::Markdown => render_markdown(report, &rows),
        ReportFormat::Csv => render_csv(&rows),
    }
}

fn render_markdown(report: &AnalysisReport, rows: &[Row]) -> String {
    let mut out = String::new();
    let ranked = |table: &'static str| {
        rows.iter().filter(move |r| r.table == table).map(|r| {
            let mut cells = vec![r.name.clone(), format!("{:.3}", r.ap)];
            cells.extend(r.cells.iter().cloned());
            cells
        })
    };
    let header = ["category", "AP", "1st", "2nd", "3rd"];

    out.push_str("## Categories with top accuracy\n\n");
    markdown_table(&mut out, &header, ranked("top_accuracy"));
    out.push_str("\n## Categories depending on context\n\n");
    out.push_str("`*` marks a context mask that lowers AP more than masking the category itself.\n\n");
    markdown_table(&mut out, &header, ranked("context_dependence"));
    out.push_str("\n## AP versus number of annotations\n\n");
    markdown_table(
        &mut out,
        &["category", "annotations", "AP"],
        rows.iter().filter(|r| r.table == "scatter").map(|r| {
            vec![r.name.clone(), r.annotations.unwrap_or(0).to_string(), format!("{:.3}", r.ap)]
        }),
    );
    if !report.notices.is_empty() {
        out.push_str("\n## Notices\n\n");
        for n in &report.notices {
            out.push_str(&format!("- {n}\n"));
        }
    }
    out
}

fn render_csv(rows: &[Row]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["table", "category_id", "category", "ap", "annotation_count", "1st", "2nd", "3rd"])
        .expect("in-memory write");
    for r in rows {
        let mut cells = r.cells.clone();
        cells.resize(3, String::new());
        let mut record = vec![
            r.table.to_string(),
            r.category_id.to_string(),
            r.name.clone(),
            r.ap.to_string(),
            r.annotations.map(|a| a.to_string()).unwrap_or_default(),
        ];
        record.extend(cells);
        w.write_record(&record).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}
