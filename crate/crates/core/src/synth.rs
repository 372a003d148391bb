//! Synthetic datasets with planted co-occurrence and a scripted detector
//! whose context dependencies are known in advance.
//!
//! Instances are solid axis-aligned rectangles. The scripted detector emits
//! one box per visible instance, scaled down by context rules when a context
//! category has no unmasked pixels left in the image. Because AP only sees
//! the score order within a category, rules alone cannot move AP; fixed-score
//! false positives give lowered true positives something to fall behind.
//!
//! Randomness: every stream is a ChaCha8 generator keyed by the configured
//! seed, a purpose constant and the id it serves (image or annotation), so
//! results do not depend on iteration order or thread count.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use image::{Rgb as Pixel, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coco::{self, Annotation, BBox, Category, CategoryId, Dataset, Detection, ImageInfo, Segmentation};
use crate::masker::{self, MaskError, MaskManifest, MaskOptions, Rgb};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Coco(#[from] coco::CocoError),
}

const IMAGE_STREAM: u64 = 0x5EED_0001;
const JITTER_STREAM: u64 = 0x5EED_0002;

fn stream(seed: u64, purpose: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ purpose.rotate_left(32));
    rng.set_stream(id);
    rng
}

fn default_min_instances() -> u32 {
    1
}
fn default_max_instances() -> u32 {
    2
}
fn default_min_size() -> u32 {
    8
}
fn default_max_size() -> u32 {
    20
}
fn default_score() -> f64 {
    0.9
}
fn default_jitter() -> f64 {
    1.0
}
fn default_fp_size() -> u32 {
    6
}
fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCategory {
    pub name: String,
    pub color: Rgb,
    #[serde(default = "default_min_instances")]
    pub min_instances: u32,
    #[serde(default = "default_max_instances")]
    pub max_instances: u32,
    #[serde(default = "default_min_size")]
    pub min_size: u32,
    #[serde(default = "default_max_size")]
    pub max_size: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecipe {
    pub categories: Vec<String>,
    pub images: u32,
}

/// Lowers `subject` scores by `factor` when `context` has no unmasked pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextRule {
    pub subject: String,
    pub context: String,
    pub factor: f64,
}

/// Emits `per_image` boxes of `category` on every image, away from that
/// category's ground truth, at a fixed score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FalsePositiveRule {
    pub category: String,
    pub score: f64,
    #[serde(default = "one")]
    pub per_image: u32,
    #[serde(default = "default_fp_size")]
    pub size: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorScript {
    /// Seed of the localization jitter; the config seed when absent.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub base_scores: BTreeMap<String, f64>,
    #[serde(default = "default_score")]
    pub default_score: f64,
    #[serde(default)]
    pub context_rules: Vec<ContextRule>,
    /// Maximum per-coordinate bbox jitter in pixels.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    #[serde(default)]
    pub false_positives: Vec<FalsePositiveRule>,
}

impl Default for DetectorScript {
    fn default() -> Self {
        Self {
            seed: None,
            base_scores: BTreeMap::new(),
            default_score: default_score(),
            context_rules: Vec::new(),
            jitter: default_jitter(),
            false_positives: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub background: Rgb,
    pub categories: Vec<SynthCategory>,
    pub scenes: Vec<SceneRecipe>,
    #[serde(default)]
    pub detector: DetectorScript,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let err = |m: String| Err(SynthError::Config(m));
        if self.width == 0 || self.height == 0 {
            return err("image size must be at least 1x1".into());
        }
        if self.scenes.is_empty() {
            return err("at least one scene recipe is required".into());
        }
        let mut names = HashSet::new();
        let mut colors = HashSet::new();
        for c in &self.categories {
            if c.name.is_empty() || !names.insert(c.name.as_str()) {
                return err(format!("category name `{}` is empty or repeated", c.name));
            }
            if !colors.insert(c.color) || c.color == self.background {
                return err(format!("category `{}` color {:?} is not distinct", c.name, c.color));
            }
            if c.min_instances == 0 || c.min_instances > c.max_instances {
                return err(format!("category `{}`: need 1 <= min_instances <= max_instances", c.name));
            }
            if c.min_size == 0 || c.min_size > c.max_size || c.min_size > self.width.min(self.height) {
                return err(format!("category `{}`: sizes must satisfy 1 <= min <= max and fit the image", c.name));
            }
        }
        for s in &self.scenes {
            for n in &s.categories {
                if !names.contains(n.as_str()) {
                    return err(format!("scene references unknown category `{n}`"));
                }
            }
        }
        self.detector.validate(&names)
    }

    /// Categories in config order get ids 1, 2, ...
    pub fn category_id(&self, name: &str) -> Option<CategoryId> {
        self.categories.iter().position(|c| c.name == name).map(|i| i as CategoryId + 1)
    }
}

impl DetectorScript {
    fn validate(&self, names: &HashSet<&str>) -> Result<(), SynthError> {
        let err = |m: String| Err(SynthError::Config(m));
        let known = |n: &str| names.contains(n);
        for (n, &s) in &self.base_scores {
            if !known(n) {
                return err(format!("base score for unknown category `{n}`"));
            }
            if !(s > 0.0 && s <= 1.0) {
                return err(format!("base score {s} for `{n}` must lie in (0, 1]"));
            }
        }
        if !(self.default_score > 0.0 && self.default_score <= 1.0) {
            return err(format!("default score {} must lie in (0, 1]", self.default_score));
        }
        for r in &self.context_rules {
            if !known(&r.subject) || !known(&r.context) {
                return err(format!("rule ({}, {}) references an unknown category", r.subject, r.context));
            }
            if !(0.0..=1.0).contains(&r.factor) {
                return err(format!("rule factor {} must lie in [0, 1]", r.factor));
            }
        }
        for f in &self.false_positives {
            if !known(&f.category) {
                return err(format!("false-positive rule references unknown category `{}`", f.category));
            }
            if !(0.0..=1.0).contains(&f.score) || f.size == 0 {
                return err(format!("false-positive rule for `{}` needs score in [0, 1] and size >= 1", f.category));
            }
        }
        if self.jitter.is_nan() || self.jitter < 0.0 {
            return err("jitter must be non-negative".into());
        }
        Ok(())
    }

    /// Checks that every rule names a category of `dataset`.
    pub fn validate_against(&self, dataset: &Dataset) -> Result<(), SynthError> {
        let names: HashSet<&str> = dataset.categories().iter().map(|c| c.name.as_str()).collect();
        self.validate(&names)
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> SynthError + '_ {
    move |source| SynthError::Io { path: path.to_path_buf(), source }
}

/// Builds the dataset in memory without writing anything.
pub fn build_dataset(config: &SynthConfig) -> Result<Dataset, SynthError> {
    config.validate()?;
    let categories: Vec<Category> = config
        .categories
        .iter()
        .enumerate()
        .map(|(i, c)| Category { id: i as u64 + 1, name: c.name.clone(), supercategory: String::new() })
        .collect();
    let mut images = Vec::new();
    let mut annotations = Vec::new();
    let mut image_id = 0u64;
    for scene in &config.scenes {
        for _ in 0..scene.images {
            image_id += 1;
            let mut rng = stream(config.seed, IMAGE_STREAM, image_id);
            images.push(ImageInfo {
                id: image_id,
                width: config.width,
                height: config.height,
                file_name: format!("img_{image_id:05}.png"),
            });
            // config order, not recipe order, so a recipe's listing order does not matter
            for (ci, cat) in config.categories.iter().enumerate() {
                if !scene.categories.contains(&cat.name) {
                    continue;
                }
                let n = rng.random_range(cat.min_instances..=cat.max_instances);
                for _ in 0..n {
                    let w = rng.random_range(cat.min_size..=cat.max_size.min(config.width));
                    let h = rng.random_range(cat.min_size..=cat.max_size.min(config.height));
                    let x = rng.random_range(0..=config.width - w) as f64;
                    let y = rng.random_range(0..=config.height - h) as f64;
                    let (w, h) = (w as f64, h as f64);
                    annotations.push(Annotation {
                        id: annotations.len() as u64 + 1,
                        image_id,
                        category_id: ci as u64 + 1,
                        bbox: BBox::new(x, y, w, h),
                        area: w * h,
                        segmentation: Segmentation::Polygons(vec![vec![x, y, x + w, y, x + w, y + h, x, y + h]]),
                        iscrowd: false,
                    });
                }
            }
        }
    }
    Ok(Dataset::new(images, annotations, categories)?)
}

/// Paints one image: background, then instances in annotation order.
pub fn render_image(config: &SynthConfig, dataset: &Dataset, image: &ImageInfo) -> RgbImage {
    let mut img = RgbImage::from_pixel(image.width, image.height, Pixel(config.background));
    for ann in dataset.annotations_for_image(image.id) {
        let color = config.categories[(ann.category_id - 1) as usize].color;
        let b = ann.bbox;
        for y in b.y as u32..b.bottom() as u32 {
            for x in b.x as u32..b.right() as u32 {
                img.put_pixel(x, y, Pixel(color));
            }
        }
    }
    img
}

/// Writes `out/images/*.png` and `out/annotations.json`.
pub fn generate_synthetic(config: &SynthConfig, out: &Path) -> Result<Dataset, SynthError> {
    let dataset = build_dataset(config)?;
    let images_dir = out.join("images");
    fs::create_dir_all(&images_dir).map_err(io_err(&images_dir))?;
    dataset.images().par_iter().try_for_each(|info| {
        let path = images_dir.join(&info.file_name);
        render_image(config, &dataset, info)
            .save_with_format(&path, image::ImageFormat::Png)
            .map_err(|source| SynthError::Image { path, source })
    })?;
    let ann_path = out.join("annotations.json");
    fs::write(&ann_path, coco::write_dataset(&dataset)).map_err(io_err(&ann_path))?;
    Ok(dataset)
}

fn jittered(bbox: &BBox, seed: u64, ann_id: u64, jitter: f64) -> BBox {
    if jitter == 0.0 {
        return *bbox;
    }
    let mut rng = stream(seed, JITTER_STREAM, ann_id);
    let mut d = || rng.random_range(-jitter..=jitter);
    let (dx, dy, dw, dh) = (d(), d(), d(), d());
    BBox::new(bbox.x + dx, bbox.y + dy, (bbox.w + dw).max(1.0), (bbox.h + dh).max(1.0))
}

/// Detections of the scripted detector on the original dataset
/// (`manifest == None`) or on one masked variant.
///
/// Instances of the masked category emit nothing. Every other non-crowd
/// instance yields one jittered box scored `base * product(factors)` over the
/// rules whose context category has no unmasked pixels in the image: it is
/// absent, or masked with its overlaps counted as the occluding category's.
pub fn scripted_detect(
    dataset: &Dataset,
    manifest: Option<&MaskManifest>,
    script: &DetectorScript,
) -> Result<Vec<Detection>, SynthError> {
    script.validate_against(dataset)?;
    let id_of = |name: &str| dataset.category_by_name(name).expect("validated").id;
    let seed = script.seed.unwrap_or(0);
    let masked_category = manifest.map(|m| m.masked_category_id);
    let rules: Vec<(CategoryId, CategoryId, f64)> = script
        .context_rules
        .iter()
        .map(|r| (id_of(&r.subject), id_of(&r.context), r.factor))
        .collect();
    let context_ids: Vec<CategoryId> = {
        let mut ids: Vec<_> = rules.iter().map(|r| r.1).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    };
    let fps: Vec<(CategoryId, &FalsePositiveRule)> =
        script.false_positives.iter().map(|f| (id_of(&f.category), f)).collect();

    let per_image = dataset
        .images()
        .par_iter()
        .map(|image| -> Result<Vec<Detection>, SynthError> {
            let mut missing_context = HashSet::new();
            for &c in &context_ids {
                let area = masker::build_category_mask(dataset, image.id, c)?.area();
                let greyed = match (masked_category, manifest.and_then(|m| m.record(image.id))) {
                    // shared pixels belong to the other category's instance
                    (Some(m), Some(rec)) if m == c => rec.masked_pixel_count + rec.skipped_overlap_pixel_count,
                    _ => 0,
                };
                if area <= greyed {
                    missing_context.insert(c);
                }
            }
            let mut dets = Vec::new();
            for ann in dataset.annotations_for_image(image.id) {
                if ann.iscrowd || Some(ann.category_id) == masked_category {
                    continue;
                }
                let name = &dataset.category(ann.category_id).expect("dataset integrity").name;
                let mut score = script.base_scores.get(name).copied().unwrap_or(script.default_score);
                for &(subject, context, factor) in &rules {
                    if subject == ann.category_id && missing_context.contains(&context) {
                        score *= factor;
                    }
                }
                dets.push(Detection {
                    image_id: image.id,
                    category_id: ann.category_id,
                    bbox: jittered(&ann.bbox, seed, ann.id, script.jitter),
                    score,
                });
            }
            for &(cat, rule) in &fps {
                let avoid: Vec<BBox> = dataset
                    .annotations_for_image(image.id)
                    .filter(|a| a.category_id == cat)
                    .map(|a| a.bbox)
                    .collect();
                dets.extend(
                    place_false_positives(image, &avoid, rule.size, rule.per_image)
                        .into_iter()
                        .map(|bbox| Detection { image_id: image.id, category_id: cat, bbox, score: rule.score }),
                );
            }
            Ok(dets)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(per_image.into_iter().flatten().collect())
}

/// Scans a grid for `count` square boxes that touch neither `avoid` nor each other.
fn place_false_positives(image: &ImageInfo, avoid: &[BBox], size: u32, count: u32) -> Vec<BBox> {
    let mut placed: Vec<BBox> = Vec::new();
    if size > image.width || size > image.height {
        return placed;
    }
    let step = (size / 2).max(1);
    'scan: for y in (0..=image.height - size).step_by(step as usize) {
        for x in (0..=image.width - size).step_by(step as usize) {
            if placed.len() as u32 >= count {
                break 'scan;
            }
            let b = BBox::new(x as f64, y as f64, size as f64, size as f64);
            if avoid.iter().chain(&placed).all(|o| b.intersection_area(o) == 0.0) {
                placed.push(b);
            }
        }
    }
    placed
}

/// Paths produced by [`generate_benchmark`].
#[derive(Debug, Clone)]
pub struct BenchmarkLayout {
    pub root: PathBuf,
    pub annotations: PathBuf,
    pub images: PathBuf,
    pub baseline_detections: PathBuf,
    /// category id -> (masked image dir, detections file)
    pub masked: BTreeMap<CategoryId, (PathBuf, PathBuf)>,
}

/// Generates the dataset, masks every category, and writes the scripted
/// detections for the original and every masked variant:
///
/// ```text
/// out/annotations.json
/// out/images/img_00001.png ...
/// out/masked/<category_id>/img_00001.png ... manifest_<category_id>.json
/// out/detections/baseline.json
/// out/detections/dets_<category_id>.json
/// ```
pub fn generate_benchmark(config: &SynthConfig, out: &Path, grey: Rgb) -> Result<(Dataset, BenchmarkLayout), SynthError> {
    let dataset = generate_synthetic(config, out)?;
    let mut script = config.detector.clone();
    script.seed.get_or_insert(config.seed);
    let det_dir = out.join("detections");
    fs::create_dir_all(&det_dir).map_err(io_err(&det_dir))?;
    let write = |path: &Path, dets: &[Detection]| fs::write(path, coco::write_detections(dets)).map_err(io_err(path));

    let baseline = det_dir.join("baseline.json");
    write(&baseline, &scripted_detect(&dataset, None, &script)?)?;

    let images = out.join("images");
    let options = MaskOptions { grey, ..MaskOptions::default() };
    let mut masked = BTreeMap::new();
    for id in dataset.category_ids() {
        let dir = out.join("masked").join(id.to_string());
        let manifest = masker::generate_masked_dataset(&dataset, &images, id, &options, &dir)?;
        let dets_path = det_dir.join(format!("dets_{id}.json"));
        write(&dets_path, &scripted_detect(&dataset, Some(&manifest), &script)?)?;
        masked.insert(id, (dir, dets_path));
    }
    let layout = BenchmarkLayout {
        root: out.to_path_buf(),
        annotations: out.join("annotations.json"),
        images,
        baseline_detections: baseline,
        masked,
    };
    Ok((dataset, layout))
}
