use serde::{Deserialize, Serialize};

use super::SegmentationError;

/// Inclusive pixel bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BoundingBox {
    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }

    pub fn union(&self, other: &Self) -> Self {
        Self {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        }
    }
}

/// Row-major binary lung mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self, SegmentationError> {
        if width == 0 || height == 0 || bits.len() != width * height {
            return Err(SegmentationError::DimensionMismatch {
                expected: (width, height),
                got: (bits.len(), 1),
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
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

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let mut bb: Option<BoundingBox> = None;
        for y in 0..self.height {
            let row = &self.bits[y * self.width..(y + 1) * self.width];
            let Some(first) = row.iter().position(|&b| b) else {
                continue;
            };
            let last = row.iter().rposition(|&b| b).unwrap_or(first);
            let r = BoundingBox {
                x0: first,
                y0: y,
                x1: last,
                y1: y,
            };
            bb = Some(bb.map_or(r, |b| b.union(&r)));
        }
        bb
    }

    fn zip_with(&self, other: &Self, f: impl Fn(bool, bool) -> bool) -> Self {
        assert_eq!(self.dims(), other.dims(), "mask dimensions differ");
        Self {
            width: self.width,
            height: self.height,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn intersection(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn union(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a || b)
    }

    /// 1-bit grayscale PNG (foreground white).
    pub fn to_png(&self) -> Vec<u8> {
        let stride = self.width.div_ceil(8);
        let mut packed = vec![0u8; stride * self.height];
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    packed[y * stride + x / 8] |= 0x80 >> (x % 8);
                }
            }
        }
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::One);
            let mut writer = enc.write_header().expect("in-memory PNG header");
            writer
                .write_image_data(&packed)
                .expect("in-memory PNG data");
        }
        out
    }

    /// Decodes any grayscale PNG; pixels above mid-scale are foreground.
    pub fn from_png(bytes: &[u8]) -> Result<Self, SegmentationError> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
            .map_err(|e| SegmentationError::MaskDecode(e.to_string()))?
            .to_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        Ok(Self {
            width: w,
            height: h,
            bits: img.into_raw().into_iter().map(|v| v >= 128).collect(),
        })
    }
}
