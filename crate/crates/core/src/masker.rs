//! Greys out one category in every image of a dataset.
//!
//! For each image the grey region is the union of the category's instance
//! masks minus the union of every other category's masks, so pixels shared
//! with another object are left alone. Annotations are never touched; the
//! masked images are meant to be evaluated against the original file.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use image::{ImageFormat, RgbImage};
use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coco::{CategoryId, Dataset, ImageId, ImageInfo};
use crate::seg::{self, BinaryMask, SegError};

pub type Rgb = [u8; 3];

/// RGB pixels, 8 bits per channel, row-major scanlines.
pub type RasterImage = RgbImage;

pub const DEFAULT_GREY: Rgb = [128, 128, 128];

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("unknown image {0}")]
    UnknownImage(ImageId),
    #[error("unknown category {0}")]
    UnknownCategory(CategoryId),
    #[error("annotation {id}: {source}")]
    Segmentation {
        id: u64,
        #[source]
        source: SegError,
    },
    #[error("region is {region_w}x{region_h} but image is {image_w}x{image_h}")]
    DimensionMismatch {
        region_w: u32,
        region_h: u32,
        image_w: u32,
        image_h: u32,
    },
    #[error("image {id} ({path}) is {actual_w}x{actual_h}, annotation file says {expected_w}x{expected_h}")]
    FileSizeMismatch {
        id: ImageId,
        path: PathBuf,
        actual_w: u32,
        actual_h: u32,
        expected_w: u32,
        expected_h: u32,
    },
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Encoding of the masked images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Png,
    /// Lossy: the pixel-identity guarantees then hold only before encoding.
    Jpeg,
}

impl OutputFormat {
    fn extension(self) -> &'static str {
        match self {
            OutputFormat::Png => "png",
            OutputFormat::Jpeg => "jpg",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskOptions {
    pub grey: Rgb,
    pub format: OutputFormat,
}

impl Default for MaskOptions {
    fn default() -> Self {
        Self { grey: DEFAULT_GREY, format: OutputFormat::Png }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageMaskRecord {
    pub image_id: ImageId,
    pub masked_pixel_count: u64,
    pub skipped_overlap_pixel_count: u64,
    pub output_file_name: String,
}

/// Provenance of one masked dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskManifest {
    pub masked_category_id: CategoryId,
    pub grey: Rgb,
    pub format: OutputFormat,
    pub images: Vec<ImageMaskRecord>,
    pub total_masked_pixel_count: u64,
    pub total_skipped_overlap_pixel_count: u64,
}

impl MaskManifest {
    pub fn from_records(masked_category_id: CategoryId, grey: Rgb, format: OutputFormat, mut images: Vec<ImageMaskRecord>) -> Self {
        images.sort_by_key(|r| r.image_id);
        Self {
            masked_category_id,
            grey,
            format,
            total_masked_pixel_count: images.iter().map(|r| r.masked_pixel_count).sum(),
            total_skipped_overlap_pixel_count: images.iter().map(|r| r.skipped_overlap_pixel_count).sum(),
            images,
        }
    }

    pub fn record(&self, image_id: ImageId) -> Option<&ImageMaskRecord> {
        self.images
            .binary_search_by_key(&image_id, |r| r.image_id)
            .ok()
            .map(|i| &self.images[i])
    }

    pub fn file_name(category_id: CategoryId) -> String {
        format!("manifest_{category_id}.json")
    }
}

fn union_of(
    dataset: &Dataset,
    image: &ImageInfo,
    include: impl Fn(CategoryId) -> bool,
) -> Result<BinaryMask, MaskError> {
    let mut acc = BinaryMask::empty(image.width, image.height);
    for ann in dataset.annotations_for_image(image.id).filter(|a| include(a.category_id)) {
        let m = seg::ann_to_mask(ann, image).map_err(|source| MaskError::Segmentation { id: ann.id, source })?;
        if m.is_empty() {
            warn!("annotation {} on image {} has an empty mask", ann.id, image.id);
            continue;
        }
        acc.union_with(&m).expect("masks share the image size");
    }
    Ok(acc)
}

/// Union of the masks of every `category_id` instance on the image.
pub fn build_category_mask(dataset: &Dataset, image_id: ImageId, category_id: CategoryId) -> Result<BinaryMask, MaskError> {
    let image = dataset.image(image_id).ok_or(MaskError::UnknownImage(image_id))?;
    union_of(dataset, image, |c| c == category_id)
}

/// Union of the masks of every instance on the image whose category is not `category_id`.
pub fn build_exclusion_mask(dataset: &Dataset, image_id: ImageId, category_id: CategoryId) -> Result<BinaryMask, MaskError> {
    let image = dataset.image(image_id).ok_or(MaskError::UnknownImage(image_id))?;
    union_of(dataset, image, |c| c != category_id)
}

/// Sets every pixel inside `region` to `grey`; all other pixels are copied.
pub fn apply_grey(image: &RasterImage, region: &BinaryMask, grey: Rgb) -> Result<RasterImage, MaskError> {
    if image.width() != region.width() || image.height() != region.height() {
        return Err(MaskError::DimensionMismatch {
            region_w: region.width(),
            region_h: region.height(),
            image_w: image.width(),
            image_h: image.height(),
        });
    }
    let mut out = image.clone();
    for (col, row, px) in out.enumerate_pixels_mut() {
        if region.get(row, col) {
            px.0 = grey;
        }
    }
    Ok(out)
}

/// Computes the grey region of one image and the manifest counts for it.
pub fn masking_region(dataset: &Dataset, image_id: ImageId, category_id: CategoryId) -> Result<(BinaryMask, u64, u64), MaskError> {
    let category = build_category_mask(dataset, image_id, category_id)?;
    if category.is_empty() {
        return Ok((category, 0, 0));
    }
    let exclusion = build_exclusion_mask(dataset, image_id, category_id)?;
    let region = seg::mask_subtract(&category, &exclusion).expect("same image size");
    let masked = region.area();
    Ok((region, masked, category.area() - masked))
}

/// Output name of an image in a masked dataset: the original relative path
/// with the extension of the output format.
pub fn output_file_name(file_name: &str, format: OutputFormat) -> String {
    Path::new(file_name)
        .with_extension(format.extension())
        .to_string_lossy()
        .replace('\\', "/")
}

fn load_rgb(path: &Path, info: &ImageInfo) -> Result<RasterImage, MaskError> {
    let img = image::open(path)
        .map_err(|source| MaskError::Read { path: path.to_path_buf(), source })?
        .to_rgb8();
    if img.width() != info.width || img.height() != info.height {
        return Err(MaskError::FileSizeMismatch {
            id: info.id,
            path: path.to_path_buf(),
            actual_w: img.width(),
            actual_h: img.height(),
            expected_w: info.width,
            expected_h: info.height,
        });
    }
    Ok(img)
}

fn save(img: &RasterImage, path: &Path, format: OutputFormat) -> Result<(), MaskError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|source| MaskError::Io { path: dir.to_path_buf(), source })?;
    }
    let fmt = match format {
        OutputFormat::Png => ImageFormat::Png,
        OutputFormat::Jpeg => ImageFormat::Jpeg,
    };
    img.save_with_format(path, fmt)
        .map_err(|source| MaskError::Write { path: path.to_path_buf(), source })
}

fn mask_one(
    dataset: &Dataset,
    info: &ImageInfo,
    images_root: &Path,
    category_id: CategoryId,
    options: &MaskOptions,
    out_root: &Path,
) -> Result<ImageMaskRecord, MaskError> {
    let src = images_root.join(&info.file_name);
    let out_name = output_file_name(&info.file_name, options.format);
    let dst = out_root.join(&out_name);
    let (region, masked, skipped) = masking_region(dataset, info.id, category_id)?;

    if masked == 0 && out_name == info.file_name {
        // untouched and already in the output format: byte copy
        load_rgb(&src, info)?;
        if let Some(dir) = dst.parent() {
            fs::create_dir_all(dir).map_err(|source| MaskError::Io { path: dir.to_path_buf(), source })?;
        }
        fs::copy(&src, &dst).map_err(|source| MaskError::Io { path: dst.clone(), source })?;
    } else {
        let img = load_rgb(&src, info)?;
        let out = if masked == 0 { img } else { apply_grey(&img, &region, options.grey)? };
        save(&out, &dst, options.format)?;
    }
    debug!("image {}: masked {masked}, skipped {skipped}", info.id);
    Ok(ImageMaskRecord {
        image_id: info.id,
        masked_pixel_count: masked,
        skipped_overlap_pixel_count: skipped,
        output_file_name: out_name,
    })
}

/// Writes the masked variant of every image under `out_root` plus
/// `manifest_<category_id>.json`. Images are processed in parallel; the
/// manifest lists them by ascending image id.
pub fn generate_masked_dataset(
    dataset: &Dataset,
    images_root: &Path,
    category_id: CategoryId,
    options: &MaskOptions,
    out_root: &Path,
) -> Result<MaskManifest, MaskError> {
    if dataset.category(category_id).is_none() {
        return Err(MaskError::UnknownCategory(category_id));
    }
    if options.format == OutputFormat::Jpeg {
        warn!("JPEG output is lossy: pixels outside the grey region will not be bit-identical");
    }
    fs::create_dir_all(out_root).map_err(|source| MaskError::Io { path: out_root.to_path_buf(), source })?;
    let records = dataset
        .images()
        .par_iter()
        .map(|info| mask_one(dataset, info, images_root, category_id, options, out_root))
        .collect::<Result<Vec<_>, _>>()?;
    let manifest = MaskManifest::from_records(category_id, options.grey, options.format, records);
    let path = out_root.join(MaskManifest::file_name(category_id));
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serialization");
    fs::write(&path, json).map_err(|source| MaskError::Io { path, source })?;
    Ok(manifest)
}
