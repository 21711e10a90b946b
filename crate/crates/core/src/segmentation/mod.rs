//! Lung mask post-processing, mask quality scoring, data-cleaning gates and
//! construction of the classifier's region-of-interest image.

mod mask;
pub mod morphology;
mod outlier;
mod postprocess;
mod quality;
mod roi;

pub use mask::{BinaryMask, BoundingBox};
pub use outlier::{medcouple, quartiles, skewed_outlier_threshold, OutlierFence};
pub use postprocess::{postprocess_mask, DEFAULT_THRESHOLD};
pub use quality::{mask_metrics, quality_score, too_small_check, MaskMetrics, QualityScore, MIN_LUNG_DIM};
pub use roi::{
    build_roi, lung_trisection, reposition_lungs, RoiImage, RoiParams, TrainStats, ROI_SIZE,
};

use thiserror::Error;

use crate::imaging::ImagingError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SegmentationError {
    #[error("no lung region found in the segmentation output")]
    NoLungFound,
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("mask has {0} components; at most 2 are supported")]
    TooManyComponents(usize),
    #[error("cannot decode mask: {0}")]
    MaskDecode(String),
    #[error("invalid training statistics: {0}")]
    TrainStats(String),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}
