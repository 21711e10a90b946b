use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::imaging::ClaheParams;
use crate::radiomics::DEFAULT_BIN_WIDTH;
use crate::segmentation::{RoiParams, DEFAULT_THRESHOLD, MIN_LUNG_DIM};

/// Where the serving-time quality threshold comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum QualityGate {
    /// The corpus fence stored in the model bundle by cleaning.
    Corpus,
    Fixed { threshold: f64 },
    Bypass,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SaliencyParams {
    pub patch: usize,
    pub stride: usize,
}

impl Default for SaliencyParams {
    fn default() -> Self {
        Self { patch: 64, stride: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Quantile window applied to the whole radiograph after decoding.
    pub input_quantiles: [f64; 2],
    pub clahe: ClaheParams,
    pub roi: RoiParams,
    /// Side of the square segmentation canvas.
    pub canvas_size: usize,
    pub seg_threshold: f64,
    pub min_lung_dim: usize,
    pub quality_gate: QualityGate,
    /// Images whose smaller side is below this go through super-resolution.
    pub sr_trigger: usize,
    pub sr_patch: usize,
    pub bin_width: f64,
    pub knn_k: usize,
    pub saliency: Option<SaliencyParams>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input_quantiles: [0.0025, 0.9975],
            clahe: ClaheParams::default(),
            roi: RoiParams::default(),
            canvas_size: 512,
            seg_threshold: DEFAULT_THRESHOLD,
            min_lung_dim: MIN_LUNG_DIM,
            quality_gate: QualityGate::Corpus,
            sr_trigger: 512,
            sr_patch: 50,
            bin_width: DEFAULT_BIN_WIDTH,
            knn_k: crate::models::DEFAULT_K,
            saliency: None,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        let quantiles_ok = |lo: f64, hi: f64| (0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi) && lo < hi;
        if !quantiles_ok(self.input_quantiles[0], self.input_quantiles[1]) {
            return bad("input_quantiles must satisfy 0 <= low < high <= 1");
        }
        if !quantiles_ok(self.roi.low_quantile, self.roi.high_quantile) {
            return bad("roi quantiles must satisfy 0 <= low < high <= 1");
        }
        if !(0.0..=1.0).contains(&self.seg_threshold) {
            return bad("seg_threshold must be in [0, 1]");
        }
        if self.canvas_size < 16 || self.roi.size < 16 {
            return bad("canvas and ROI sizes must be at least 16");
        }
        if self.sr_patch == 0 {
            return bad("sr_patch must be positive");
        }
        if !(self.bin_width > 0.0 && self.bin_width <= 1.0) {
            return bad("bin_width must be in (0, 1]");
        }
        if self.knn_k == 0 {
            return bad("knn_k must be at least 1");
        }
        if let QualityGate::Fixed { threshold } = self.quality_gate {
            if !threshold.is_finite() {
                return bad("quality threshold must be finite");
            }
        }
        if let Some(s) = self.saliency {
            if s.patch == 0 || s.stride == 0 || s.patch > self.roi.size {
                return bad("saliency patch and stride must be in [1, roi size]");
            }
        }
        if self.clahe.tiles_x == 0 || self.clahe.tiles_y == 0 || self.clahe.bins < 2 {
            return bad("clahe needs at least one tile and two bins");
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
