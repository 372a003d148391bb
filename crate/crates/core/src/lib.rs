//! Per-category dataset masking, COCO-style AP evaluation and
//! context-dependence analysis for object detectors.
//!
//! The pipeline: parse a COCO annotation file ([`coco`]), grey out one
//! category at a time ([`masker`]), score externally produced detections on
//! each variant ([`eval`]), then compare every masked evaluation with the
//! baseline ([`analysis`]) and render tables ([`report`]). [`synth`] builds
//! small datasets with a scripted detector whose context dependencies are
//! known in advance.

pub mod analysis;
pub mod coco;
pub mod cooccur;
pub mod eval;
pub mod masker;
pub mod report;
pub mod seg;
pub mod synth;

pub use coco::{
    Annotation, BBox, Category, CategoryId, Dataset, Detection, ImageId, ImageInfo,
    ReferenceMode, Segmentation,
};
pub use seg::{BinaryMask, RunLengthEncoding};
