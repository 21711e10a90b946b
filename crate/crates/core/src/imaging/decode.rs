use image::DynamicImage;
use serde::{Deserialize, Serialize};

use super::{dicom, ImagingError, RasterImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    Png,
    Jpeg,
    Dicom,
}

impl ImageFormat {
    /// Maps a MIME type (as sent in uploads) to a format hint.
    pub fn from_mime(mime: &str) -> Option<Self> {
        match mime.split(';').next().unwrap_or("").trim() {
            "image/png" => Some(Self::Png),
            "image/jpeg" | "image/jpg" => Some(Self::Jpeg),
            "application/dicom" => Some(Self::Dicom),
            _ => None,
        }
    }

    pub fn from_extension(ext: &str) -> Option<Self> {
        match ext.to_ascii_lowercase().as_str() {
            "png" => Some(Self::Png),
            "jpg" | "jpeg" => Some(Self::Jpeg),
            "dcm" | "dicom" => Some(Self::Dicom),
            _ => None,
        }
    }
}

/// Sniffs the container from magic bytes.
pub fn detect_format(bytes: &[u8]) -> Option<ImageFormat> {
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        Some(ImageFormat::Png)
    } else if bytes.starts_with(&[0xFF, 0xD8, 0xFF]) {
        Some(ImageFormat::Jpeg)
    } else if bytes.len() >= 132 && &bytes[128..132] == b"DICM" {
        Some(ImageFormat::Dicom)
    } else {
        None
    }
}

/// Decodes PNG, JPEG or DICOM bytes into a grayscale raster.
///
/// Magic bytes win over the hint; the hint is only used when sniffing fails
/// (e.g. a DICOM stream without preamble is still rejected).
pub fn decode_image(bytes: &[u8], hint: Option<ImageFormat>) -> Result<RasterImage, ImagingError> {
    let format = match detect_format(bytes) {
        Some(f) => f,
        None if bytes.is_empty() => {
            return Err(ImagingError::UnsupportedFormat("empty input".into()))
        }
        None => match hint {
            Some(ImageFormat::Png) | Some(ImageFormat::Jpeg) => {
                return Err(ImagingError::CorruptStream(
                    "missing image signature".into(),
                ))
            }
            Some(ImageFormat::Dicom) => {
                return Err(ImagingError::CorruptStream("missing DICM preamble".into()))
            }
            None => {
                return Err(ImagingError::UnsupportedFormat(
                    "unrecognized signature".into(),
                ))
            }
        },
    };
    match format {
        ImageFormat::Png => decode_raster(bytes, image::ImageFormat::Png),
        ImageFormat::Jpeg => {
            check_jpeg_terminated(bytes)?;
            decode_raster(bytes, image::ImageFormat::Jpeg)
        }
        ImageFormat::Dicom => dicom::decode(bytes),
    }
}

// The JPEG decoder pads truncated scans with gray, so a missing EOI marker is
// treated as corruption up front.
pub(crate) fn check_jpeg_terminated(bytes: &[u8]) -> Result<(), ImagingError> {
    let tail = &bytes[bytes.len().saturating_sub(64)..];
    if tail.windows(2).any(|w| w == [0xFF, 0xD9]) {
        Ok(())
    } else {
        Err(ImagingError::CorruptStream("JPEG stream truncated (no EOI)".into()))
    }
}

pub(crate) fn decode_raster(
    bytes: &[u8],
    format: image::ImageFormat,
) -> Result<RasterImage, ImagingError> {
    let img = image::load_from_memory_with_format(bytes, format).map_err(|e| match e {
        image::ImageError::Unsupported(u) => ImagingError::UnsupportedFormat(u.to_string()),
        other => ImagingError::CorruptStream(other.to_string()),
    })?;
    Ok(dynamic_to_raster(img))
}

fn dynamic_to_raster(img: DynamicImage) -> RasterImage {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels: Vec<f64> = match img {
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        DynamicImage::ImageLumaA8(b) => b
            .into_raw()
            .chunks_exact(2)
            .map(|c| c[0] as f64 / 255.0)
            .collect(),
        DynamicImage::ImageLuma16(b) => b
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 65535.0)
            .collect(),
        DynamicImage::ImageLumaA16(b) => b
            .into_raw()
            .chunks_exact(2)
            .map(|c| c[0] as f64 / 65535.0)
            .collect(),
        DynamicImage::ImageRgb8(b) => luma_average(&b.into_raw(), 3, 255.0),
        DynamicImage::ImageRgba8(b) => luma_average(&b.into_raw(), 4, 255.0),
        DynamicImage::ImageRgb16(b) => luma_average(&b.into_raw(), 3, 65535.0),
        DynamicImage::ImageRgba16(b) => luma_average(&b.into_raw(), 4, 65535.0),
        other => {
            let rgb = other.to_rgb32f();
            rgb.into_raw()
                .chunks_exact(3)
                .map(|c| (c[0] as f64 + c[1] as f64 + c[2] as f64) / 3.0)
                .collect()
        }
    };
    RasterImage::from_clamped(w, h, pixels)
}

fn luma_average<T: Copy + Into<f64>>(raw: &[T], channels: usize, full_scale: f64) -> Vec<f64> {
    raw.chunks_exact(channels)
        .map(|c| (c[0].into() + c[1].into() + c[2].into()) / (3.0 * full_scale))
        .collect()
}
