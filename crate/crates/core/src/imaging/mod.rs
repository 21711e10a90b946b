//! Image decoding, intensity standardization, contrast enhancement, resampling
//! and patch tiling.
//!
//! Every operation is a pure function of its inputs and returns rasters whose
//! pixels stay in `[0, 1]`.

mod clahe;
mod decode;
pub mod dicom;
mod intensity;
mod patches;
mod raster;
mod resize;

pub use clahe::{enhance_contrast, enhance_contrast_with, ClaheParams};
pub use decode::{decode_image, detect_format, ImageFormat};
pub use intensity::{quantile_nearest_rank, standardize_intensity, standardize_in_place};
pub use patches::{assemble_patches, tile_patches, PatchGrid};
pub use raster::RasterImage;
pub use resize::{resize, resize_exact, FitPad, ResizeMode};


use thiserror::Error;

/// Default cut-offs for the first standardization pass.
pub const DEFAULT_LOW_QUANTILE: f64 = 0.0025;
pub const DEFAULT_HIGH_QUANTILE: f64 = 0.9975;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImagingError {
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt image stream: {0}")]
    CorruptStream(String),
    #[error("DICOM object carries no usable pixel data: {0}")]
    NonImageDicom(String),
    #[error("invalid raster dimensions {width}x{height} for {len} pixels")]
    InvalidDimensions {
        width: usize,
        height: usize,
        len: usize,
    },
    #[error("pixel value {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("invalid quantile pair ({low}, {high})")]
    InvalidQuantiles { low: f64, high: f64 },
    #[error("patch {index} is {got_w}x{got_h}, expected {expected}x{expected}")]
    PatchShapeMismatch {
        index: usize,
        got_w: usize,
        got_h: usize,
        expected: usize,
    },
    #[error("patch size and scale must be at least 1")]
    InvalidPatchSize,
}

pub(crate) fn encode_gray8_png(width: usize, height: usize, bytes: &[u8]) -> Vec<u8> {
    use image::ImageEncoder;
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(
            bytes,
            width as u32,
            height as u32,
            image::ExtendedColorType::L8,
        )
        .expect("in-memory PNG encoding cannot fail");
    out
}
