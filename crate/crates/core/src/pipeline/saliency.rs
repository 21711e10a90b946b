use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::imaging::RasterImage;
use crate::labels::Class;
use crate::models::{run_inference, ModelBackendHandle, Tensor};
use crate::segmentation::RoiImage;

/// Probability drop of the target class per occluded patch position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    pub grid_w: usize,
    pub grid_h: usize,
    pub patch: usize,
    pub stride: usize,
    pub target: Class,
    pub baseline: f64,
    /// Row-major `baseline - p(occluded)`; may be negative.
    pub drops: Vec<f64>,
}

fn positions(size: usize, patch: usize, stride: usize) -> Vec<usize> {
    (0..=size - patch).step_by(stride).collect()
}

fn class_probability(out: &Tensor, target: Class) -> f64 {
    out.data[target.index()] as f64
}

/// Zeroes a `patch × patch` window of the ROI at each grid position and
/// records how much the classifier's target probability falls.
pub fn occlusion_saliency(
    roi: &RoiImage,
    classifier: &ModelBackendHandle,
    patch: usize,
    stride: usize,
    target: Class,
) -> Result<SaliencyMap, PipelineError> {
    let size = roi.size;
    if patch == 0 || stride == 0 || patch > size {
        return Err(PipelineError::Config(format!("saliency patch {patch} / stride {stride} invalid for size {size}")));
    }
    let backend = |source| PipelineError::Backend {
        stage: "saliency",
        source,
    };
    let input = Tensor::new(vec![size, size], roi.pixels.clone()).map_err(backend)?;
    let baseline = class_probability(&run_inference(classifier, &input).map_err(backend)?, target);
    let xs = positions(size, patch, stride);
    let mut drops = Vec::with_capacity(xs.len() * xs.len());
    let mut occluded = input.clone();
    for &y0 in &xs {
        for &x0 in &xs {
            for y in y0..y0 + patch {
                occluded.data[y * size + x0..y * size + x0 + patch].fill(0.0);
            }
            let p = class_probability(&run_inference(classifier, &occluded).map_err(backend)?, target);
            drops.push(baseline - p);
            for y in y0..y0 + patch {
                let row = y * size + x0..y * size + x0 + patch;
                occluded.data[row.clone()].copy_from_slice(&input.data[row]);
            }
        }
    }
    Ok(SaliencyMap {
        grid_w: xs.len(),
        grid_h: xs.len(),
        patch,
        stride,
        target,
        baseline,
        drops,
    })
}

impl SaliencyMap {
    /// Drops clamped at 0 and divided by the largest; all zero when nothing
    /// lowers the probability.
    pub fn normalized(&self) -> Vec<f64> {
        let max = self.drops.iter().cloned().fold(0.0, f64::max);
        if max <= 0.0 {
            return vec![0.0; self.drops.len()];
        }
        self.drops.iter().map(|d| d.max(0.0) / max).collect()
    }

    /// Pixel heatmap: each pixel averages the normalized cells whose patch
    /// covers it.
    pub fn to_raster(&self, size: usize) -> RasterImage {
        let norm = self.normalized();
        let mut sum = vec![0.0; size * size];
        let mut count = vec![0u32; size * size];
        for gy in 0..self.grid_h {
            for gx in 0..self.grid_w {
                let v = norm[gy * self.grid_w + gx];
                let (x0, y0) = (gx * self.stride, gy * self.stride);
                for y in y0..(y0 + self.patch).min(size) {
                    for x in x0..(x0 + self.patch).min(size) {
                        sum[y * size + x] += v;
                        count[y * size + x] += 1;
                    }
                }
            }
        }
        let px = sum.iter().zip(&count).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect();
        RasterImage::from_clamped(size, size, px)
    }
}
