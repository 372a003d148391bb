//! Pixel-exact segmentation masks: the compressed COCO RLE codec, polygon
//! rasterization and boolean mask operations.
//!
//! Masks are stored column-major: pixel `(row, col)` lives at `col * height + row`,
//! the same order COCO run lengths walk.

use thiserror::Error;

use crate::coco::{Annotation, ImageInfo, Segmentation};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SegError {
    #[error("RLE string is truncated (last chunk has the continuation bit set)")]
    Truncated,
    #[error("RLE string has invalid character {0:?}")]
    InvalidChar(char),
    #[error("RLE value at position {0} does not fit in 64 bits")]
    Overflow(usize),
    #[error("RLE run {index} reconstructs to negative count {value}")]
    NegativeCount { index: usize, value: i64 },
    #[error("RLE counts sum to {sum}, expected {expected} ({height}x{width})")]
    CountMismatch {
        sum: u64,
        expected: u64,
        height: u32,
        width: u32,
    },
    #[error("polygon {index} has {len} coordinates; need an even count of at least 6")]
    DegeneratePolygon { index: usize, len: usize },
    #[error("mask dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
}

/// A boolean raster in column-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width as usize * height as usize],
        }
    }

    /// Wraps column-major bits. Returns `None` when the length is not `width * height`.
    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Option<Self> {
        (bits.len() == width as usize * height as usize).then_some(Self { width, height, bits })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    fn index(&self, row: u32, col: u32) -> usize {
        col as usize * self.height as usize + row as usize
    }

    pub fn get(&self, row: u32, col: u32) -> bool {
        self.bits[self.index(row, col)]
    }

    pub fn set(&mut self, row: u32, col: u32, value: bool) {
        let i = self.index(row, col);
        self.bits[i] = value;
    }

    pub fn area(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    fn check_same_size(&self, other: &BinaryMask) -> Result<(), SegError> {
        if self.width != other.width || self.height != other.height {
            return Err(SegError::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }

    fn zip_with(&self, other: &BinaryMask, op: impl Fn(bool, bool) -> bool) -> Result<Self, SegError> {
        self.check_same_size(other)?;
        Ok(Self {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| op(a, b)).collect(),
        })
    }

    /// In-place union; used when accumulating many instance masks.
    pub fn union_with(&mut self, other: &BinaryMask) -> Result<(), SegError> {
        self.check_same_size(other)?;
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
        Ok(())
    }
}

pub fn mask_union(a: &BinaryMask, b: &BinaryMask) -> Result<BinaryMask, SegError> {
    a.zip_with(b, |x, y| x || y)
}

pub fn mask_intersection(a: &BinaryMask, b: &BinaryMask) -> Result<BinaryMask, SegError> {
    a.zip_with(b, |x, y| x && y)
}

/// Pixels of `a` that are not in `b`.
pub fn mask_subtract(a: &BinaryMask, b: &BinaryMask) -> Result<BinaryMask, SegError> {
    a.zip_with(b, |x, y| x && !y)
}

pub fn mask_area(a: &BinaryMask) -> u64 {
    a.area()
}

/// Run lengths over the column-major pixel order, alternating background and
/// foreground and starting with a (possibly empty) background run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunLengthEncoding {
    height: u32,
    width: u32,
    counts: Vec<u32>,
}

impl RunLengthEncoding {
    pub fn new(height: u32, width: u32, counts: Vec<u32>) -> Result<Self, SegError> {
        let sum: u64 = counts.iter().map(|&c| c as u64).sum();
        let expected = height as u64 * width as u64;
        if sum != expected {
            return Err(SegError::CountMismatch { sum, expected, height, width });
        }
        Ok(Self { height, width, counts })
    }

    pub fn from_mask(mask: &BinaryMask) -> Self {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for &bit in &mask.bits {
            if bit != current {
                counts.push(run);
                run = 0;
                current = bit;
            }
            run += 1;
        }
        counts.push(run);
        Self {
            height: mask.height,
            width: mask.width,
            counts,
        }
    }

    pub fn to_mask(&self) -> BinaryMask {
        let mut bits = Vec::with_capacity(self.height as usize * self.width as usize);
        for (i, &c) in self.counts.iter().enumerate() {
            bits.extend(std::iter::repeat_n(i % 2 == 1, c as usize));
        }
        BinaryMask {
            width: self.width,
            height: self.height,
            bits,
        }
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| c as u64).sum()
    }
}

/// Writes run counts in the compressed COCO string form.
///
/// Counts from index 3 on are stored as the difference to the count two
/// places earlier; each value is emitted as little-endian 5-bit groups with a
/// continuation bit (0x20), offset into printable ASCII by 48.
pub fn encode_counts(counts: &[u32]) -> String {
    let mut out = String::with_capacity(counts.len() * 2);
    for (i, &c) in counts.iter().enumerate() {
        let mut x = c as i64;
        if i > 2 {
            x -= counts[i - 2] as i64;
        }
        loop {
            let mut chunk = (x & 0x1f) as u8;
            x >>= 5;
            let more = if chunk & 0x10 != 0 { x != -1 } else { x != 0 };
            if more {
                chunk |= 0x20;
            }
            out.push((chunk + 48) as char);
            if !more {
                break;
            }
        }
    }
    out
}

/// Inverse of [`encode_counts`]. Does not check the counts against a size.
pub fn decode_counts(encoded: &str) -> Result<Vec<u32>, SegError> {
    let bytes = encoded.as_bytes();
    let mut counts: Vec<u32> = Vec::new();
    let mut p = 0;
    while p < bytes.len() {
        let mut x: i64 = 0;
        let mut shift = 0u32;
        loop {
            let Some(&b) = bytes.get(p) else {
                return Err(SegError::Truncated);
            };
            if !(48..48 + 64).contains(&b) {
                return Err(SegError::InvalidChar(b as char));
            }
            if shift >= 64 {
                return Err(SegError::Overflow(counts.len()));
            }
            let c = (b - 48) as i64;
            x |= (c & 0x1f) << shift;
            shift += 5;
            p += 1;
            if c & 0x20 == 0 {
                if c & 0x10 != 0 && shift < 64 {
                    x |= -1i64 << shift;
                }
                break;
            }
        }
        let m = counts.len();
        if m > 2 {
            x += counts[m - 2] as i64;
        }
        if !(0..=u32::MAX as i64).contains(&x) {
            return Err(SegError::NegativeCount { index: m, value: x });
        }
        counts.push(x as u32);
    }
    Ok(counts)
}

/// Decodes a compressed RLE string for an `height x width` mask.
pub fn rle_decode(encoded: &str, height: u32, width: u32) -> Result<RunLengthEncoding, SegError> {
    RunLengthEncoding::new(height, width, decode_counts(encoded)?)
}

/// Encodes a mask as a compressed RLE string.
pub fn rle_encode(mask: &BinaryMask) -> String {
    encode_counts(&RunLengthEncoding::from_mask(mask).counts)
}

/// Rasterizes polygons: a pixel is set iff its center lies inside any polygon
/// under the even-odd rule. Centers exactly on a left or top edge count as
/// inside, on a right or bottom edge as outside.
pub fn rasterize_polygons(polygons: &[Vec<f64>], height: u32, width: u32) -> Result<BinaryMask, SegError> {
    let mut mask = BinaryMask::empty(width, height);
    let mut crossings: Vec<f64> = Vec::new();
    for (index, poly) in polygons.iter().enumerate() {
        if poly.len() < 6 || poly.len() % 2 != 0 {
            return Err(SegError::DegeneratePolygon { index, len: poly.len() });
        }
        let vertices: Vec<(f64, f64)> = poly.chunks_exact(2).map(|p| (p[0], p[1])).collect();
        let (ymin, ymax) = vertices
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, y)| (lo.min(y), hi.max(y)));
        let first_row = (ymin - 0.5).ceil().max(0.0) as i64;
        let last_row = ((ymax - 0.5).floor() as i64).min(height as i64 - 1);
        for row in first_row..=last_row {
            let cy = row as f64 + 0.5;
            crossings.clear();
            for (k, &(x0, y0)) in vertices.iter().enumerate() {
                let (x1, y1) = vertices[(k + 1) % vertices.len()];
                if (y0 > cy) != (y1 > cy) {
                    crossings.push(x0 + (cy - y0) * (x1 - x0) / (y1 - y0));
                }
            }
            crossings.sort_by(f64::total_cmp);
            for span in crossings.chunks_exact(2) {
                // columns whose center c + 0.5 lies in [span[0], span[1])
                let start = (span[0] - 0.5).ceil().max(0.0) as i64;
                let end = ((span[1] - 0.5).ceil() as i64).min(width as i64);
                for col in start..end {
                    mask.set(row as u32, col as u32, true);
                }
            }
        }
    }
    Ok(mask)
}

/// Rasterizes one annotation's segmentation at the size of its image.
pub fn ann_to_mask(ann: &Annotation, image: &ImageInfo) -> Result<BinaryMask, SegError> {
    match &ann.segmentation {
        Segmentation::Polygons(polys) => rasterize_polygons(polys, image.height, image.width),
        Segmentation::Rle(rle) => {
            if rle.height != image.height || rle.width != image.width {
                return Err(SegError::DimensionMismatch(
                    rle.width,
                    rle.height,
                    image.width,
                    image.height,
                ));
            }
            Ok(rle.to_mask())
        }
    }
}
