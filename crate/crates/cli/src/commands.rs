use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use ctxmask_core::analysis::{self, AnalysisReport};
use ctxmask_core::coco::{self, CategoryId, Dataset, ReferenceMode};
use ctxmask_core::cooccur::cooccurrence_matrix;
use ctxmask_core::eval::{self, EvalError, EvalParams, EvalResult};
use ctxmask_core::masker::{self, MaskError, MaskOptions, OutputFormat, Rgb};
use ctxmask_core::report::{self, ReportFormat, ReportOptions};
use ctxmask_core::synth::{self, SynthConfig, SynthError};
use log::{info, warn};
use regex::Regex;

/// A failed command, classified by exit status.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Io(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Io(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Io(m) => f.write_str(m),
        }
    }
}

impl From<MaskError> for Failure {
    fn from(e: MaskError) -> Self {
        match e {
            MaskError::Read { .. } | MaskError::Write { .. } | MaskError::Io { .. } => Failure::Io(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io(_) => Failure::Io(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<SynthError> for Failure {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Io { .. } | SynthError::Image { .. } => Failure::Io(e.to_string()),
            SynthError::Mask(inner) => inner.into(),
            _ => Failure::Data(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Io(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> Outcome {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Failure::Io(format!("cannot create {}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display())))
}

fn emit(out: Option<&Path>, contents: &str) -> Outcome {
    match out {
        Some(path) => write(path, contents),
        None => io::stdout()
            .write_all(contents.as_bytes())
            .map_err(|e| Failure::Io(format!("cannot write to stdout: {e}"))),
    }
}

fn load_dataset(path: &Path) -> Result<Dataset, Failure> {
    coco::parse_dataset(&read(path)?).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn mode(lenient: bool) -> ReferenceMode {
    if lenient {
        ReferenceMode::Lenient
    } else {
        ReferenceMode::Strict
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("plain data serializes");
    text.push('\n');
    text
}

pub fn validate(ann: &Path, dets: Option<&Path>, lenient: bool) -> Outcome {
    let ds = load_dataset(ann)?;
    let violations = coco::validate(&ds);
    for v in &violations {
        println!("{v}");
    }
    if let Some(path) = dets {
        let list = coco::parse_detections(&read(path)?, &ds, mode(lenient))
            .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
        println!("{}: {} detections", path.display(), list.len());
    }
    if !violations.is_empty() {
        return Err(Failure::Data(format!("{}: {} violation(s)", ann.display(), violations.len())));
    }
    println!(
        "{}: {} images, {} annotations, {} categories, no violations",
        ann.display(),
        ds.images().len(),
        ds.annotations().len(),
        ds.categories().len()
    );
    Ok(())
}

fn select_categories(ds: &Dataset, selector: &str) -> Result<Vec<CategoryId>, Failure> {
    if selector == "all" {
        return Ok(ds.category_ids());
    }
    if let Some(c) = selector.parse::<CategoryId>().ok().and_then(|id| ds.category(id)) {
        return Ok(vec![c.id]);
    }
    ds.category_by_name(selector)
        .map(|c| vec![c.id])
        .ok_or_else(|| Failure::Data(format!("no category with id or name `{selector}`")))
}

pub fn mask(ann: &Path, images: &Path, out: &Path, selector: &str, grey: Rgb, format: OutputFormat) -> Outcome {
    let ds = load_dataset(ann)?;
    if !images.is_dir() {
        return Err(Failure::Io(format!("image directory {} does not exist", images.display())));
    }
    let options = MaskOptions { grey, format };
    for id in select_categories(&ds, selector)? {
        let dir = out.join(id.to_string());
        let manifest = masker::generate_masked_dataset(&ds, images, id, &options, &dir)?;
        println!(
            "{id}\t{}\t{} images\t{} masked\t{} skipped",
            ds.category(id).map(|c| c.name.as_str()).unwrap_or_default(),
            manifest.images.len(),
            manifest.total_masked_pixel_count,
            manifest.total_skipped_overlap_pixel_count
        );
    }
    Ok(())
}

pub fn cooccur(ann: &Path, out: Option<&Path>) -> Outcome {
    emit(out, &cooccurrence_matrix(&load_dataset(ann)?).to_csv())
}

pub fn eval(ann: &Path, dets: &Path, out: &Path, lenient: bool) -> Outcome {
    let ds = load_dataset(ann)?;
    let list = coco::parse_detections(&read(dets)?, &ds, mode(lenient))
        .map_err(|e| Failure::Data(format!("{}: {e}", dets.display())))?;
    let result = eval::evaluate(&ds, &list, &EvalParams::default())?;
    write(&out.with_extension("csv"), &result.to_csv())?;
    write(&out.with_extension("json"), &to_json(&result))?;
    match result.map {
        Some(map) => println!("mAP {map:.3} over {} categories", result.per_category.iter().filter(|c| c.ap.is_some()).count()),
        None => println!("mAP undefined: no category has ground truth"),
    }
    Ok(())
}

fn load_eval(path: &Path) -> Result<EvalResult, Failure> {
    let text = read(path)?;
    let parsed = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => serde_json::from_str(&text).map_err(|e| e.to_string()),
        Some("csv") => EvalResult::from_csv(&text).map_err(|e| e.to_string()),
        _ => return Err(Failure::Usage(format!("{}: expected a .json or .csv evaluation", path.display()))),
    };
    parsed.map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

/// eval_<id>.json or eval_<id>.csv in `dir`; JSON wins when both exist.
fn discover_evals(dir: &Path) -> Result<BTreeMap<CategoryId, PathBuf>, Failure> {
    let pattern = Regex::new(r"^eval_(\d+)\.(json|csv)$").expect("valid pattern");
    let entries = fs::read_dir(dir).map_err(|e| Failure::Io(format!("cannot list {}: {e}", dir.display())))?;
    let mut found: BTreeMap<CategoryId, PathBuf> = BTreeMap::new();
    for entry in entries {
        let entry = entry.map_err(|e| Failure::Io(format!("cannot list {}: {e}", dir.display())))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let Some(caps) = pattern.captures(&name) else { continue };
        let Ok(id) = caps[1].parse::<CategoryId>() else { continue };
        let keep = match found.get(&id) {
            Some(existing) => existing.extension().is_some_and(|e| e == "csv"),
            None => true,
        };
        if keep {
            found.insert(id, entry.path());
        }
    }
    Ok(found)
}

fn parse_override(arg: &str) -> Result<(CategoryId, PathBuf), Failure> {
    let (id, path) = arg
        .split_once('=')
        .ok_or_else(|| Failure::Usage(format!("--masked-eval expects ID=PATH, got `{arg}`")))?;
    let id = id
        .trim()
        .parse()
        .map_err(|_| Failure::Usage(format!("--masked-eval: `{id}` is not a category id")))?;
    Ok((id, PathBuf::from(path)))
}

pub fn analyze(
    ann: &Path,
    baseline: &Path,
    evals: Option<&Path>,
    overrides: &[String],
    out: &Path,
    top_k: usize,
) -> Outcome {
    let ds = load_dataset(ann)?;
    let base = load_eval(baseline)?;
    let mut paths = match evals {
        Some(dir) => discover_evals(dir)?,
        None => BTreeMap::new(),
    };
    for arg in overrides {
        let (id, path) = parse_override(arg)?;
        paths.insert(id, path);
    }
    if paths.is_empty() {
        return Err(Failure::Usage("no masked evaluations: pass --evals or --masked-eval".into()));
    }
    let mut masked = BTreeMap::new();
    for (id, path) in &paths {
        if ds.category(*id).is_none() {
            return Err(Failure::Data(format!("{}: category {id} is not in {}", path.display(), ann.display())));
        }
        info!("masked evaluation {id}: {}", path.display());
        masked.insert(*id, load_eval(path)?);
    }
    let report = analysis::analyze(&base, &masked, &ds, top_k);
    for notice in &report.notices {
        warn!("{notice}");
    }
    write(&out.with_extension("json"), &to_json(&report))?;
    write(&out.with_extension("csv"), &report.to_csv())?;
    let dominant = report.targets.iter().filter(|t| t.context_dominant == Some(true)).count();
    println!(
        "{} targets, {} masked evaluations, {dominant} context-dominant, {} notices",
        report.targets.len(),
        masked.len(),
        report.notices.len()
    );
    Ok(())
}

pub fn report(analysis: &Path, format: ReportFormat, options: &ReportOptions, out: Option<&Path>) -> Outcome {
    let parsed: AnalysisReport =
        serde_json::from_str(&read(analysis)?).map_err(|e| Failure::Data(format!("{}: {e}", analysis.display())))?;
    emit(out, &report::render(&parsed, format, options))
}

pub fn synth(config: &Path, out: &Path, seed: Option<u64>, grey: Rgb) -> Outcome {
    let mut cfg: SynthConfig =
        serde_json::from_str(&read(config)?).map_err(|e| Failure::Data(format!("{}: {e}", config.display())))?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let (ds, layout) = synth::generate_benchmark(&cfg, out, grey)?;
    println!(
        "{} images, {} annotations, {} masked variants under {}",
        ds.images().len(),
        ds.annotations().len(),
        layout.masked.len(),
        out.display()
    );
    Ok(())
}
