use serde::{Deserialize, Serialize};

use super::catalog::{FeatureCatalog, Segment};
use super::discretize::{LevelImage, DIRECTIONS};
use super::first_order::extract_first_order;
use super::glcm::extract_glcm;
use super::runs::{extract_gldm, extract_glrlm, extract_glszm, extract_ngtdm};
use super::RadiomicsError;
use crate::imaging::RasterImage;
use crate::segmentation::{BinaryMask, RoiImage};

/// Bin width of the primary feature pass.
pub const DEFAULT_BIN_WIDTH: f64 = 0.05;
/// Bin width of the augmentation pass.
pub const AUGMENT_BIN_WIDTH: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub bin_width: f64,
    /// Segments with at least one zero-filled family block (empty band, or
    /// too few pixels for a texture family).
    pub degraded_segments: Vec<Segment>,
}

/// The 87 values of one band; the flag is false when any block was zero-filled.
fn segment_block(lung: &RasterImage, band: &BinaryMask, bin_width: f64) -> (Vec<f64>, bool) {
    let mut out = Vec::with_capacity(FeatureCatalog::PER_SEGMENT);
    let mut ok = true;
    let mut push = |r: Result<Vec<f64>, RadiomicsError>, len: usize| match r {
        Ok(v) => out.extend(v),
        Err(_) => {
            ok = false;
            out.extend(std::iter::repeat_n(0.0, len));
        }
    };
    let pixels: Vec<f64> = lung
        .pixels()
        .iter()
        .zip(band.bits())
        .filter_map(|(&p, &b)| b.then_some(p))
        .collect();
    push(extract_first_order(&pixels, bin_width).map(Vec::from), 19);
    let levels = LevelImage::from_masked(lung, band, bin_width);
    push(extract_glcm(&levels, &DIRECTIONS).map(Vec::from), 24);
    push(extract_glrlm(&levels, &DIRECTIONS).map(Vec::from), 16);
    push(extract_glszm(&levels).map(Vec::from), 16);
    push(extract_ngtdm(&levels).map(Vec::from), 5);
    push(extract_gldm(&levels).map(Vec::from), 7);
    for v in out.iter_mut() {
        if !v.is_finite() {
            *v = 0.0;
            ok = false;
        }
    }
    (out, ok)
}

/// Features of the three lung bands in catalog order (UL, ML, LL), computed
/// on the ROI's lung raster.
pub fn extract_case_features(roi: &RoiImage, bands: &[BinaryMask; 3], bin_width: f64) -> FeatureVector {
    extract_raster_features(&roi.lung, bands, bin_width)
}

pub fn extract_raster_features(lung: &RasterImage, bands: &[BinaryMask; 3], bin_width: f64) -> FeatureVector {
    let mut values = Vec::with_capacity(FeatureCatalog::DIMENSION);
    let mut degraded = Vec::new();
    for (segment, band) in Segment::ALL.into_iter().zip(bands) {
        let (vals, ok) = segment_block(lung, band, bin_width);
        if !ok {
            tracing::debug!(?segment, "segment features zero-filled");
            degraded.push(segment);
        }
        values.extend(vals);
    }
    FeatureVector {
        values,
        bin_width,
        degraded_segments: degraded,
    }
}
