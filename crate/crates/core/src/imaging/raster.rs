use serde::{Deserialize, Serialize};

use super::ImagingError;

/// Row-major grayscale raster with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl RasterImage {
    /// Validating constructor: dimensions must match and every value must lie in `[0, 1]`.
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self, ImagingError> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(ImagingError::InvalidDimensions {
                width,
                height,
                len: pixels.len(),
            });
        }
        if let Some(bad) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(ImagingError::OutOfRange(*bad));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Builds a raster from arbitrary values, clamping into `[0, 1]` (NaN becomes 0).
    pub fn from_clamped(width: usize, height: usize, mut pixels: Vec<f64>) -> Self {
        assert!(width > 0 && height > 0, "raster dimensions must be positive");
        assert_eq!(pixels.len(), width * height, "pixel count mismatch");
        for p in &mut pixels {
            *p = clamp_unit(*p);
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::from_clamped(width, height, pixels)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self::from_clamped(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.pixels
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| {
                (lo.min(p), hi.max(p))
            })
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    /// Copies the `w`x`h` window starting at (`x0`, `y0`).
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Self {
        assert!(x0 + w <= self.width && y0 + h <= self.height, "crop out of bounds");
        let mut pixels = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            let row = y * self.width;
            pixels.extend_from_slice(&self.pixels[row + x0..row + x0 + w]);
        }
        Self {
            width: w,
            height: h,
            pixels,
        }
    }

    /// 8-bit grayscale PNG used for debug dumps and served artifacts.
    pub fn to_png(&self) -> Vec<u8> {
        let bytes: Vec<u8> = self
            .pixels
            .iter()
            .map(|p| (p * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        super::encode_gray8_png(self.width, self.height, &bytes)
    }
}

#[inline]
pub(crate) fn clamp_unit(p: f64) -> f64 {
    if p.is_nan() {
        0.0
    } else {
        p.clamp(0.0, 1.0)
    }
}
