//! Reference implementations used as oracles by the integration tests.
//! Nothing here calls into the library code it checks.

#![allow(dead_code)]

use std::collections::BTreeMap;

use ctxmask_core::coco::{Annotation, BBox, Category, CategoryId, Dataset, Detection, ImageInfo, Segmentation};
use ctxmask_core::seg::{rasterize_polygons, BinaryMask, RunLengthEncoding};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---- RLE ----

/// Run lengths of a column-major bit vector, starting with a (possibly empty) zero run.
pub fn reference_counts(bits: &[bool]) -> Vec<u32> {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for &b in bits {
        if b != current {
            counts.push(run);
            run = 0;
            current = b;
        }
        run += 1;
    }
    counts.push(run);
    counts
}

/// Decoder for the compressed counts string written from the format description:
/// 5 payload bits per character, bit 0x20 continues, bit 0x10 of the last
/// character is the sign, offset 48, and every count from the third on is
/// stored relative to the count two places before it.
pub fn reference_decode(s: &str) -> Vec<i64> {
    let bytes = s.as_bytes();
    let mut out: Vec<i64> = Vec::new();
    let mut p = 0;
    while p < bytes.len() {
        let mut x: i64 = 0;
        let mut shift = 0;
        loop {
            let c = (bytes[p] - 48) as i64;
            p += 1;
            x |= (c & 0x1f) << shift;
            shift += 5;
            if c & 0x20 == 0 {
                if c & 0x10 != 0 {
                    x |= -1i64 << shift;
                }
                break;
            }
        }
        if out.len() > 2 {
            x += out[out.len() - 2];
        }
        out.push(x);
    }
    out
}

/// Random masks of mixed texture: noise, rectangles, stripes, empty and full.
pub fn random_mask(rng: &mut ChaCha8Rng, max_side: u32) -> BinaryMask {
    let w = rng.random_range(1..=max_side);
    let h = rng.random_range(1..=max_side);
    let n = (w * h) as usize;
    let bits: Vec<bool> = match rng.random_range(0..5) {
        0 => {
            let p: f64 = rng.random();
            (0..n).map(|_| rng.random_bool(p)).collect()
        }
        1 => {
            let mut bits = vec![false; n];
            for _ in 0..rng.random_range(1..6) {
                let (c0, r0) = (rng.random_range(0..w), rng.random_range(0..h));
                let (c1, r1) = (rng.random_range(c0..w) + 1, rng.random_range(r0..h) + 1);
                for c in c0..c1 {
                    for r in r0..r1 {
                        bits[(c * h + r) as usize] = true;
                    }
                }
            }
            bits
        }
        2 => {
            let period = rng.random_range(1..40);
            (0..n).map(|i| (i / period) % 2 == 1).collect()
        }
        3 => vec![false; n],
        _ => vec![true; n],
    };
    BinaryMask::from_bits(w, h, bits).expect("size matches")
}

// ---- boxes and matching ----

#[derive(Debug, Clone, Copy)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn from_xywh(b: &BBox, width: u32, height: u32) -> Rect {
        let clamp = |v: f64, hi: u32| v.max(0.0).min(hi as f64);
        let (x0, y0) = (clamp(b.x, width), clamp(b.y, height));
        let (x1, y1) = (clamp(b.x + b.w, width), clamp(b.y + b.h, height));
        Rect { x0, y0, x1: x1.max(x0), y1: y1.max(y0) }
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn overlap(&self, o: &Rect) -> f64 {
        let w = self.x1.min(o.x1) - self.x0.max(o.x0);
        let h = self.y1.min(o.y1) - self.y0.max(o.y0);
        if w > 0.0 && h > 0.0 {
            w * h
        } else {
            0.0
        }
    }
}

fn iou(a: &Rect, b: &Rect) -> f64 {
    let i = a.overlap(b);
    let u = a.area() + b.area() - i;
    if u > 0.0 {
        i / u
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Tp,
    Fp,
    Ignore,
}

/// Greedy assignment of score-sorted detections in one image.
/// `gts` pairs a rectangle with its crowd flag.
pub fn greedy(gts: &[(Rect, bool)], dets: &[Rect], thr: f64) -> Vec<Outcome> {
    let mut used = vec![false; gts.len()];
    let mut out = Vec::new();
    for d in dets {
        let mut pick: Option<usize> = None;
        let mut pick_iou = -1.0;
        for (g, (r, crowd)) in gts.iter().enumerate() {
            if *crowd || used[g] {
                continue;
            }
            let v = iou(d, r);
            if v >= thr && v > pick_iou {
                pick = Some(g);
                pick_iou = v;
            }
        }
        if let Some(g) = pick {
            used[g] = true;
            out.push(Outcome::Tp);
        } else if gts.iter().any(|(r, crowd)| *crowd && d.area() > 0.0 && d.overlap(r) / d.area() >= thr) {
            out.push(Outcome::Ignore);
        } else {
            out.push(Outcome::Fp);
        }
    }
    out
}

/// AP by sweeping a score threshold over the distinct detection scores and
/// re-matching the surviving detections from scratch at every step.
/// Assumes detection scores within a category are distinct.
pub fn sweep_ap(
    dataset: &Dataset,
    detections: &[Detection],
    iou_thresholds: &[f64],
    recall_points: usize,
) -> BTreeMap<CategoryId, Option<f64>> {
    let mut out = BTreeMap::new();
    for cat in dataset.categories() {
        let num_gt = dataset
            .annotations()
            .iter()
            .filter(|a| a.category_id == cat.id && !a.iscrowd)
            .count();
        if num_gt == 0 {
            out.insert(cat.id, None);
            continue;
        }
        let dets: Vec<&Detection> = detections
            .iter()
            .filter(|d| d.category_id == cat.id && dataset.image(d.image_id).is_some())
            .collect();
        let mut scores: Vec<f64> = dets.iter().map(|d| d.score).collect();
        scores.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let mut total = 0.0;
        for &thr in iou_thresholds {
            let mut points: Vec<(f64, f64)> = Vec::new();
            for &cut in &scores {
                let (mut tp, mut fp) = (0usize, 0usize);
                for img in dataset.images() {
                    let gts: Vec<(Rect, bool)> = dataset
                        .annotations()
                        .iter()
                        .filter(|a| a.image_id == img.id && a.category_id == cat.id)
                        .map(|a| (Rect::from_xywh(&a.bbox, img.width, img.height), a.iscrowd))
                        .collect();
                    let mut kept: Vec<&&Detection> =
                        dets.iter().filter(|d| d.image_id == img.id && d.score >= cut).collect();
                    kept.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
                    let rects: Vec<Rect> = kept.iter().map(|d| Rect::from_xywh(&d.bbox, img.width, img.height)).collect();
                    for o in greedy(&gts, &rects, thr) {
                        match o {
                            Outcome::Tp => tp += 1,
                            Outcome::Fp => fp += 1,
                            Outcome::Ignore => {}
                        }
                    }
                }
                let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
                points.push((tp as f64 / num_gt as f64, precision));
            }
            let mut sum = 0.0;
            for i in 0..recall_points {
                let r = i as f64 / (recall_points - 1) as f64;
                sum += points.iter().filter(|p| p.0 >= r).map(|p| p.1).fold(0.0, f64::max);
            }
            total += sum / recall_points as f64;
        }
        out.insert(cat.id, Some(total / iou_thresholds.len() as f64));
    }
    out
}

/// Oracle outcome of every detection at one IoU threshold, by input index.
/// Detections on unknown images get `None`.
pub fn outcomes(dataset: &Dataset, detections: &[Detection], thr: f64) -> Vec<Option<Outcome>> {
    let mut out = vec![None; detections.len()];
    for img in dataset.images() {
        for cat in dataset.categories() {
            let gts: Vec<(Rect, bool)> = dataset
                .annotations()
                .iter()
                .filter(|a| a.image_id == img.id && a.category_id == cat.id)
                .map(|a| (Rect::from_xywh(&a.bbox, img.width, img.height), a.iscrowd))
                .collect();
            let mut idx: Vec<usize> = (0..detections.len())
                .filter(|&i| detections[i].image_id == img.id && detections[i].category_id == cat.id)
                .collect();
            idx.sort_by(|&a, &b| detections[b].score.partial_cmp(&detections[a].score).unwrap());
            let rects: Vec<Rect> = idx.iter().map(|&i| Rect::from_xywh(&detections[i].bbox, img.width, img.height)).collect();
            for (&i, o) in idx.iter().zip(greedy(&gts, &rects, thr)) {
                out[i] = Some(o);
            }
        }
    }
    out
}

pub fn coco_iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

// ---- random evaluation instances ----

fn rect_polygon(b: &BBox) -> Vec<f64> {
    vec![b.x, b.y, b.x + b.w, b.y, b.x + b.w, b.y + b.h, b.x, b.y + b.h]
}

/// A small dataset (1-3 images, 1-2 categories, crowd regions included) and
/// up to 6 detections with distinct scores, many of them perturbed ground
/// truth boxes, some reaching past the image border.
pub fn random_instance(seed: u64) -> (Dataset, Vec<Detection>) {
    let mut rng = rng(seed);
    let n_images = rng.random_range(1..=3u64);
    let n_cats = rng.random_range(1..=2u64);
    let images: Vec<ImageInfo> = (1..=n_images)
        .map(|id| ImageInfo {
            id,
            width: rng.random_range(12..=24),
            height: rng.random_range(12..=24),
            file_name: format!("{id}.png"),
        })
        .collect();
    let categories: Vec<Category> = (1..=n_cats)
        .map(|id| Category { id, name: format!("cat{id}"), supercategory: String::new() })
        .collect();
    let mut annotations = Vec::new();
    for img in &images {
        for cat in 1..=n_cats {
            for _ in 0..rng.random_range(0..=3) {
                let iscrowd = rng.random_bool(0.2);
                let w = rng.random_range(2..=img.width / 2 + 4) as f64;
                let h = rng.random_range(2..=img.height / 2 + 4) as f64;
                let x = rng.random_range(0..img.width - 2) as f64;
                let y = rng.random_range(0..img.height - 2) as f64;
                let bbox = BBox::new(x, y, w, h).clip(img.width as f64, img.height as f64);
                let segmentation = if iscrowd {
                    let mask = rasterize_polygons(&[rect_polygon(&bbox)], img.height, img.width).unwrap();
                    Segmentation::Rle(RunLengthEncoding::from_mask(&mask))
                } else {
                    Segmentation::Polygons(vec![rect_polygon(&bbox)])
                };
                annotations.push(Annotation {
                    id: annotations.len() as u64 + 1,
                    image_id: img.id,
                    category_id: cat,
                    bbox,
                    area: bbox.area(),
                    segmentation,
                    iscrowd,
                });
            }
        }
    }
    let mut scores: Vec<f64> = (1..=64).map(|i| i as f64 / 64.0).collect();
    scores.shuffle(&mut rng);
    let n_dets = rng.random_range(0..=6);
    let mut detections = Vec::new();
    for score in scores.into_iter().take(n_dets) {
        let img = &images[rng.random_range(0..images.len())];
        let category_id = rng.random_range(1..=n_cats);
        let in_image: Vec<&Annotation> = annotations.iter().filter(|a| a.image_id == img.id).collect();
        let bbox = if !in_image.is_empty() && rng.random_bool(0.7) {
            let b = in_image[rng.random_range(0..in_image.len())].bbox;
            let mut j = || rng.random_range(-2..=2) as f64;
            BBox::new(b.x + j(), b.y + j(), (b.w + j()).max(1.0), (b.h + j()).max(1.0))
        } else {
            BBox::new(
                rng.random_range(-3..img.width as i32) as f64,
                rng.random_range(-3..img.height as i32) as f64,
                rng.random_range(1..=12) as f64,
                rng.random_range(1..=12) as f64,
            )
        };
        detections.push(Detection { image_id: img.id, category_id, bbox, score });
    }
    let dataset = Dataset::new(images, annotations, categories).expect("generated ids are consistent");
    (dataset, detections)
}
