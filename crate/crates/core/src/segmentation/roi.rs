use serde::{Deserialize, Serialize};

use super::morphology::connected_components;
use super::{BinaryMask, SegmentationError};
use crate::container;
use crate::imaging::{resize, standardize_in_place, FitPad, RasterImage, ResizeMode};

pub const ROI_SIZE: usize = 512;
const STD_FLOOR: f32 = 1e-6;
const STATS_KIND: &str = "train_stats";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoiParams {
    /// Quantile window for re-standardizing lung pixels.
    pub low_quantile: f64,
    pub high_quantile: f64,
    /// Horizontal gap left between the two lungs, in native pixels.
    pub lung_gap: usize,
    pub size: usize,
}

impl Default for RoiParams {
    fn default() -> Self {
        Self {
            low_quantile: 0.0005,
            high_quantile: 0.9995,
            lung_gap: 8,
            size: ROI_SIZE,
        }
    }
}

/// Per-pixel mean and standard deviation of ROI rasters over a training corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainStats {
    size: usize,
    mean: Vec<f32>,
    std: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct StatsMeta {
    shape: [usize; 3],
}

impl TrainStats {
    pub fn new(size: usize, mean: Vec<f32>, std: Vec<f32>) -> Result<Self, SegmentationError> {
        if mean.len() != size * size || std.len() != size * size {
            return Err(SegmentationError::TrainStats(format!(
                "expected {} values per plane",
                size * size
            )));
        }
        Ok(Self { size, mean, std })
    }

    /// Zero mean, unit std: standardization becomes the identity.
    pub fn identity(size: usize) -> Self {
        Self {
            size,
            mean: vec![0.0; size * size],
            std: vec![1.0; size * size],
        }
    }

    /// Population statistics over equally sized rasters.
    pub fn fit<'a>(
        size: usize,
        rasters: impl IntoIterator<Item = &'a RasterImage>,
    ) -> Result<Self, SegmentationError> {
        let n_px = size * size;
        let mut n = 0.0f64;
        let mut mean = vec![0.0f64; n_px];
        let mut m2 = vec![0.0f64; n_px];
        for r in rasters {
            if r.dims() != (size, size) {
                return Err(SegmentationError::DimensionMismatch {
                    expected: (size, size),
                    got: r.dims(),
                });
            }
            n += 1.0;
            for (i, &v) in r.pixels().iter().enumerate() {
                let d = v - mean[i];
                mean[i] += d / n;
                m2[i] += d * (v - mean[i]);
            }
        }
        if n == 0.0 {
            return Err(SegmentationError::TrainStats("no training rasters".into()));
        }
        Ok(Self {
            size,
            mean: mean.iter().map(|&m| m as f32).collect(),
            std: m2.iter().map(|&s| (s / n).sqrt() as f32).collect(),
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn mean(&self) -> &[f32] {
        &self.mean
    }

    pub fn std(&self) -> &[f32] {
        &self.std
    }

    fn payload(&self) -> Vec<f32> {
        let mut v = self.mean.clone();
        v.extend_from_slice(&self.std);
        v
    }

    /// Short identifier derived from the payload checksum.
    pub fn id(&self) -> String {
        container::payload_checksum(&self.payload())[..16].to_string()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        container::encode(
            STATS_KIND,
            &StatsMeta {
                shape: [2, self.size, self.size],
            },
            &self.payload(),
        )
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SegmentationError> {
        let (meta, mut values): (StatsMeta, Vec<f32>) = container::decode(STATS_KIND, bytes)
            .map_err(|e| SegmentationError::TrainStats(e.to_string()))?;
        let [planes, h, w] = meta.shape;
        if planes != 2 || h != w || values.len() != 2 * h * w {
            return Err(SegmentationError::TrainStats(format!("bad shape {:?}", meta.shape)));
        }
        let std = values.split_off(h * w);
        Self::new(h, values, std)
    }
}

/// Classifier input built from one radiograph and its lung mask.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiImage {
    pub size: usize,
    /// Per-pixel standardized values, row-major.
    pub pixels: Vec<f32>,
    /// Lung-only raster before per-pixel standardization.
    pub lung: RasterImage,
    /// Lung mask in ROI coordinates.
    pub mask: BinaryMask,
    pub fit: FitPad,
    /// Identifier of the training statistics applied, `"none"` without them.
    pub norm_params: String,
}

/// Moves the two lungs horizontally so that their bounding boxes are exactly
/// `gap` pixels apart (left lung first, vertical placement kept) and crops to
/// the joint bounding box. Single-lung masks are only cropped.
pub fn reposition_lungs(
    img: &RasterImage,
    mask: &BinaryMask,
    gap: usize,
) -> Result<(RasterImage, BinaryMask), SegmentationError> {
    if img.dims() != mask.dims() {
        return Err(SegmentationError::DimensionMismatch {
            expected: img.dims(),
            got: mask.dims(),
        });
    }
    let w = img.width();
    let mut comps = connected_components(mask);
    match comps.len() {
        0 => return Err(SegmentationError::EmptyMask),
        1 | 2 => {}
        n => return Err(SegmentationError::TooManyComponents(n)),
    }
    comps.sort_by_key(|c| (c.bbox.x0, c.bbox.x1));
    let y0 = comps.iter().map(|c| c.bbox.y0).min().unwrap();
    let y1 = comps.iter().map(|c| c.bbox.y1).max().unwrap();
    let mut offsets = Vec::with_capacity(comps.len());
    let mut cursor = 0;
    for c in &comps {
        offsets.push(cursor);
        cursor += c.bbox.width() + gap;
    }
    let out_w = cursor - gap;
    let out_h = y1 - y0 + 1;
    let mut pixels = vec![0.0; out_w * out_h];
    let mut out_mask = BinaryMask::empty(out_w, out_h);
    for (c, &off) in comps.iter().zip(&offsets) {
        for &i in &c.pixels {
            let (x, y) = (i % w, i / w);
            let (nx, ny) = (x - c.bbox.x0 + off, y - y0);
            pixels[ny * out_w + nx] = img.pixels()[i];
            out_mask.set(nx, ny, true);
        }
    }
    Ok((RasterImage::from_clamped(out_w, out_h, pixels), out_mask))
}

fn resize_mask_nearest(mask: &BinaryMask, fit: &FitPad, size: usize) -> BinaryMask {
    let (w, h) = mask.dims();
    let rx = w as f64 / fit.content_w as f64;
    let ry = h as f64 / fit.content_h as f64;
    let mut out = BinaryMask::empty(size, size);
    for y in 0..fit.content_h {
        let sy = (((y as f64 + 0.5) * ry) as usize).min(h - 1);
        for x in 0..fit.content_w {
            let sx = (((x as f64 + 0.5) * rx) as usize).min(w - 1);
            if mask.get(sx, sy) {
                out.set(x + fit.pad_left, y + fit.pad_top, true);
            }
        }
    }
    out
}

/// Masks the radiograph to the lungs, re-standardizes lung intensities, closes
/// the gap between the lungs, crops, fits into a square canvas and optionally
/// applies per-pixel training statistics.
pub fn build_roi(
    img: &RasterImage,
    mask: &BinaryMask,
    stats: Option<&TrainStats>,
    params: &RoiParams,
) -> Result<RoiImage, SegmentationError> {
    if img.dims() != mask.dims() {
        return Err(SegmentationError::DimensionMismatch {
            expected: img.dims(),
            got: mask.dims(),
        });
    }
    if mask.is_empty() {
        return Err(SegmentationError::EmptyMask);
    }
    if let Some(s) = stats {
        if s.size() != params.size {
            return Err(SegmentationError::DimensionMismatch {
                expected: (params.size, params.size),
                got: (s.size(), s.size()),
            });
        }
    }
    let idx: Vec<usize> = (0..mask.bits().len()).filter(|&i| mask.bits()[i]).collect();
    let mut lung_vals: Vec<f64> = idx.iter().map(|&i| img.pixels()[i]).collect();
    standardize_in_place(&mut lung_vals, params.low_quantile, params.high_quantile)?;
    let mut masked = vec![0.0; img.pixels().len()];
    for (&i, &v) in idx.iter().zip(&lung_vals) {
        masked[i] = v;
    }
    let masked = RasterImage::from_clamped(img.width(), img.height(), masked);
    let (cropped, cropped_mask) = reposition_lungs(&masked, mask, params.lung_gap)?;
    let (lung, fit) = resize(&cropped, params.size, params.size, ResizeMode::FitPad);
    let roi_mask = resize_mask_nearest(&cropped_mask, &fit, params.size);
    let mut roi = RoiImage {
        size: params.size,
        pixels: Vec::new(),
        lung,
        mask: roi_mask,
        fit,
        norm_params: String::new(),
    };
    roi.normalize(stats);
    Ok(roi)
}

impl RoiImage {
    /// Recomputes `pixels` from `lung` with the given statistics (or none).
    pub fn normalize(&mut self, stats: Option<&TrainStats>) {
        self.pixels = match stats {
            Some(s) => self
                .lung
                .pixels()
                .iter()
                .zip(s.mean().iter().zip(s.std()))
                .map(|(&v, (&m, &sd))| (v as f32 - m) / sd.max(STD_FLOOR))
                .collect(),
            None => self.lung.pixels().iter().map(|&v| v as f32).collect(),
        };
        self.norm_params = stats.map_or_else(|| "none".to_string(), TrainStats::id);
    }
}

/// Splits the mask's bounding box into upper, middle and lower bands of
/// heights `H/3`, `H/3` and the remainder, intersected with the mask.
pub fn lung_trisection(mask: &BinaryMask) -> Result<[BinaryMask; 3], SegmentationError> {
    let bbox = mask.bounding_box().ok_or(SegmentationError::EmptyMask)?;
    let third = bbox.height() / 3;
    let cuts = [bbox.y0, bbox.y0 + third, bbox.y0 + 2 * third, bbox.y1 + 1];
    let (w, h) = mask.dims();
    let band = |k: usize| BinaryMask::from_fn(w, h, |x, y| y >= cuts[k] && y < cuts[k + 1] && mask.get(x, y));
    Ok([band(0), band(1), band(2)])
}
