use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{canonical_json, occlusion_saliency, Backends, ModelBundle, PipelineConfig, PipelineError, QualityGate, SaliencyMap};
use crate::container::sha256_hex;
use crate::imaging::{
    assemble_patches, decode_image, detect_format, enhance_contrast_with, resize, resize_exact, standardize_intensity,
    tile_patches, FitPad, ImageFormat, RasterImage, ResizeMode,
};
use crate::labels::{decide_class, Class, ClassProbabilities};
use crate::models::{
    dense_forward, gmm_predict_subtype, knn_embed, run_inference, tree_predict, ModelBackendHandle, ModelError,
    SubtypeAssignment, Tensor,
};
use crate::radiomics::{extract_case_features, FeatureVector, Segment};
use crate::segmentation::{
    build_roi, lung_trisection, mask_metrics, postprocess_mask, quality_score, BinaryMask, MaskMetrics, QualityScore,
    RoiImage, SegmentationError,
};

pub const RESULT_SCHEMA_VERSION: u32 = 1;

/// A validated configuration, fitted bundle and backend set. Immutable and
/// shareable across threads.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: PipelineConfig,
    pub bundle: Arc<ModelBundle>,
    pub backends: Backends,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, bundle: Arc<ModelBundle>, backends: Backends) -> Result<Self, PipelineError> {
        config.validate()?;
        bundle.validate()?;
        if let Some(s) = &bundle.train_stats {
            if s.size() != config.roi.size {
                return Err(PipelineError::Config(format!(
                    "training statistics are {}x{}, ROI size is {}",
                    s.size(),
                    s.size(),
                    config.roi.size
                )));
            }
        }
        if config.quality_gate == QualityGate::Corpus && bundle.quality_threshold.is_none() {
            return Err(PipelineError::Config(
                "quality gate uses the corpus threshold but the bundle has none".into(),
            ));
        }
        Ok(Self {
            config,
            bundle,
            backends,
        })
    }

    pub fn quality_threshold(&self) -> Option<f64> {
        match self.config.quality_gate {
            QualityGate::Corpus => self.bundle.quality_threshold,
            QualityGate::Fixed { threshold } => Some(threshold),
            QualityGate::Bypass => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub micros: u64,
}

#[derive(Debug, Default)]
pub(crate) struct Timer {
    pub stages: Vec<StageTiming>,
}

impl Timer {
    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.stages.push(StageTiming {
            stage: stage.to_string(),
            micros: start.elapsed().as_micros() as u64,
        });
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SrMethod {
    None,
    Backend,
    BilinearFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputInfo {
    pub format: ImageFormat,
    pub width: usize,
    pub height: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeGate {
    pub passed: bool,
    /// Lung bounding box in input-image pixels.
    pub lung_width: usize,
    pub lung_height: usize,
    pub min_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityGateOutcome {
    pub passed: bool,
    pub score: f64,
    pub threshold: Option<f64>,
    pub gate: QualityGate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskInfo {
    pub width: usize,
    pub height: usize,
    pub area: usize,
    pub png_sha256: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectionReason {
    NoLungFound,
    TooSmall,
    LowQuality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub reason: RejectionReason,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub probabilities: ClassProbabilities,
    pub class: Class,
    pub image_branch: ClassProbabilities,
    pub radiomics_branch: ClassProbabilities,
    pub subtype: SubtypeAssignment,
    pub embedding: [f64; 2],
    pub degraded_segments: Vec<Segment>,
    pub roi_normalization: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyInfo {
    pub target: Class,
    pub grid_w: usize,
    pub grid_h: usize,
    pub patch: usize,
    pub stride: usize,
    pub baseline: f64,
    pub png_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub schema_version: u32,
    pub input: InputInfo,
    pub super_resolution: SrMethod,
    pub canvas: FitPad,
    pub size_gate: Option<SizeGate>,
    pub quality_gate: Option<QualityGateOutcome>,
    pub mask: Option<MaskInfo>,
    pub mask_metrics: Option<MaskMetrics>,
    pub quality: Option<QualityScore>,
    pub rejection: Option<Rejection>,
    pub classification: Option<Classification>,
    pub saliency: Option<SaliencyInfo>,
    pub timings: Vec<StageTiming>,
}

impl PipelineResult {
    pub fn is_rejected(&self) -> bool {
        self.rejection.is_some()
    }

    /// Canonical JSON of the whole result.
    pub fn to_canonical_json(&self) -> String {
        canonical_json(self)
    }

    /// Canonical JSON without stage timings, the only run-dependent field;
    /// this is the form compared against golden files.
    pub fn golden_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("result serializes");
        v.as_object_mut().expect("object").remove("timings");
        canonical_json(&v)
    }
}

/// Result plus the rasters behind its artifact references.
#[derive(Debug, Clone)]
pub struct CaseOutcome {
    pub result: PipelineResult,
    pub mask: Option<BinaryMask>,
    pub roi: Option<RoiImage>,
    pub saliency: Option<SaliencyMap>,
}

impl CaseOutcome {
    pub fn mask_png(&self) -> Option<Vec<u8>> {
        self.mask.as_ref().map(BinaryMask::to_png)
    }

    pub fn roi_png(&self) -> Option<Vec<u8>> {
        self.roi.as_ref().map(|r| r.lung.to_png())
    }

    pub fn saliency_png(&self) -> Option<Vec<u8>> {
        let size = self.roi.as_ref()?.size;
        self.saliency.as_ref().map(|s| s.to_raster(size).to_png())
    }
}

fn backend_err(stage: &'static str) -> impl Fn(ModelError) -> PipelineError {
    move |source| PipelineError::Backend { stage, source }
}

/// Decoded and conditioned radiograph on the segmentation canvas.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    pub input: InputInfo,
    pub sr: SrMethod,
    pub canvas: RasterImage,
    pub fit: FitPad,
}

pub(crate) fn prepare(
    bytes: &[u8],
    hint: Option<ImageFormat>,
    cfg: &PipelineConfig,
    backends: &Backends,
    t: &mut Timer,
) -> Result<Prepared, PipelineError> {
    let img = t.time("decode", || decode_image(bytes, hint))?;
    let format = detect_format(bytes).or(hint).expect("decoded input has a format");
    let input = InputInfo {
        format,
        width: img.width(),
        height: img.height(),
        sha256: sha256_hex(bytes),
    };
    let [lo, hi] = cfg.input_quantiles;
    let img = t.time("standardize", || standardize_intensity(&img, lo, hi))?;
    let img = t.time("enhance_contrast", || enhance_contrast_with(&img, &cfg.clahe));
    let (img, sr) = if img.width().min(img.height()) < cfg.sr_trigger {
        t.time("super_resolution", || super_resolve(&img, cfg.sr_patch, backends.super_resolution.as_ref()))?
    } else {
        (img, SrMethod::None)
    };
    let (canvas, fit) = t.time("resize", || resize(&img, cfg.canvas_size, cfg.canvas_size, ResizeMode::FitPad));
    Ok(Prepared {
        input,
        sr,
        canvas,
        fit,
    })
}

fn super_resolve(
    img: &RasterImage,
    patch: usize,
    backend: Option<&ModelBackendHandle>,
) -> Result<(RasterImage, SrMethod), PipelineError> {
    let Some(h) = backend else {
        return Ok((resize_exact(img, 2 * img.width(), 2 * img.height()), SrMethod::BilinearFallback));
    };
    let d = h.descriptor();
    if d.input_shape != [patch, patch] || d.output_shape.len() != 2 || d.output_shape[0] % patch != 0 {
        return Err(PipelineError::Config(format!(
            "super-resolution backend {} does not map {patch}x{patch} patches to a whole multiple",
            d.id
        )));
    }
    let scale = d.output_shape[0] / patch;
    let grid = tile_patches(img, patch)?;
    let grid = grid.map_patches(|p| {
        let t = Tensor::from_f64(vec![patch, patch], p.pixels()).map_err(backend_err("super_resolution"))?;
        let out = run_inference(h, &t).map_err(backend_err("super_resolution"))?;
        Ok::<_, PipelineError>(RasterImage::from_clamped(patch * scale, patch * scale, out.to_f64()))
    })?;
    Ok((assemble_patches(&grid, scale)?, SrMethod::Backend))
}

/// Runs the segmentation backend and post-processing; `None` when no lung
/// survives.
pub(crate) fn segment(
    prepared: &Prepared,
    cfg: &PipelineConfig,
    backends: &Backends,
    t: &mut Timer,
) -> Result<Option<BinaryMask>, PipelineError> {
    let h = Backends::require(&backends.segmentation, "segmentation")?;
    let size = cfg.canvas_size;
    let prob = t.time("segmentation", || {
        let input = Tensor::from_f64(vec![size, size], prepared.canvas.pixels())?;
        run_inference(&h, &input)
    });
    let prob = prob.map_err(backend_err("segmentation"))?;
    let prob = RasterImage::from_clamped(size, size, prob.to_f64());
    match t.time("postprocess", || postprocess_mask(&prob, cfg.seg_threshold)) {
        Ok(m) => Ok(Some(m)),
        Err(SegmentationError::NoLungFound) => Ok(None),
        Err(e) => Err(PipelineError::stage("postprocess", e)),
    }
}

/// Lung bounding box mapped back to input-image pixels.
pub(crate) fn size_gate(mask: &BinaryMask, prepared: &Prepared, min_dim: usize) -> SizeGate {
    let (w, h) = match mask.bounding_box() {
        Some(b) => {
            let sx = prepared.input.width as f64 / prepared.fit.content_w as f64;
            let sy = prepared.input.height as f64 / prepared.fit.content_h as f64;
            ((b.width() as f64 * sx).round() as usize, (b.height() as f64 * sy).round() as usize)
        }
        None => (0, 0),
    };
    SizeGate {
        passed: w >= min_dim && h >= min_dim,
        lung_width: w,
        lung_height: h,
        min_dim,
    }
}

fn mask_info(mask: &BinaryMask) -> MaskInfo {
    MaskInfo {
        width: mask.width(),
        height: mask.height(),
        area: mask.count(),
        png_sha256: sha256_hex(&mask.to_png()),
    }
}

fn checked_probabilities(out: &Tensor, stage: &'static str) -> Result<ClassProbabilities, PipelineError> {
    let v: Vec<f64> = out.to_f64();
    let sum: f64 = v.iter().sum();
    if v.len() != 3 || v.iter().any(|p| *p < 0.0) || (sum - 1.0).abs() > 1e-3 {
        return Err(PipelineError::Backend {
            stage,
            source: ModelError::InferenceFailure(format!("output {v:?} is not a probability vector")),
        });
    }
    Ok(ClassProbabilities::from_array([v[0] / sum, v[1] / sum, v[2] / sum]))
}

pub(crate) fn roi_tensor(roi: &RoiImage) -> Tensor {
    Tensor {
        shape: vec![roi.size, roi.size],
        data: roi.pixels.clone(),
    }
}

pub(crate) fn image_branch(roi: &RoiImage, backends: &Backends) -> Result<ClassProbabilities, PipelineError> {
    let h = Backends::require(&backends.classifier, "image_branch")?;
    let out = run_inference(&h, &roi_tensor(roi)).map_err(backend_err("image_branch"))?;
    checked_probabilities(&out, "image_branch")
}

pub(crate) fn neural_features(roi: &RoiImage, backends: &Backends) -> Result<Vec<f64>, PipelineError> {
    let h = Backends::require(&backends.feature_extractor, "embedding")?;
    Ok(run_inference(&h, &roi_tensor(roi)).map_err(backend_err("embedding"))?.to_f64())
}

pub(crate) fn radiomics_features(roi: &RoiImage, bin_width: f64) -> Result<FeatureVector, PipelineError> {
    let bands = lung_trisection(&roi.mask).map_err(|e| PipelineError::stage("radiomics", e))?;
    Ok(extract_case_features(roi, &bands, bin_width))
}

/// Full single-case flow: conditioning, segmentation, size and quality gates,
/// ROI, both classification branches, tree aggregation and subtype
/// assignment. Gate rejections are results, not errors, and never reach the
/// classification backends.
pub fn process_case(bytes: &[u8], hint: Option<ImageFormat>, pipeline: &Pipeline) -> Result<CaseOutcome, PipelineError> {
    let cfg = &pipeline.config;
    let bundle = &pipeline.bundle;
    let backends = &pipeline.backends;
    let mut t = Timer::default();
    let prepared = prepare(bytes, hint, cfg, backends, &mut t)?;
    let mut result = PipelineResult {
        schema_version: RESULT_SCHEMA_VERSION,
        input: prepared.input.clone(),
        super_resolution: prepared.sr,
        canvas: prepared.fit,
        size_gate: None,
        quality_gate: None,
        mask: None,
        mask_metrics: None,
        quality: None,
        rejection: None,
        classification: None,
        saliency: None,
        timings: Vec::new(),
    };
    let outcome = |mut result: PipelineResult, t: Timer, mask, roi, saliency| {
        result.timings = t.stages;
        Ok(CaseOutcome {
            result,
            mask,
            roi,
            saliency,
        })
    };

    let Some(mask) = segment(&prepared, cfg, backends, &mut t)? else {
        result.rejection = Some(Rejection {
            reason: RejectionReason::NoLungFound,
            message: "segmentation found no lung region".into(),
        });
        return outcome(result, t, None, None, None);
    };
    result.mask = Some(mask_info(&mask));

    let size = t.time("size_gate", || size_gate(&mask, &prepared, cfg.min_lung_dim));
    result.size_gate = Some(size);
    if !size.passed {
        result.rejection = Some(Rejection {
            reason: RejectionReason::TooSmall,
            message: format!(
                "lung region {}x{} px, minimum {} px",
                size.lung_width, size.lung_height, size.min_dim
            ),
        });
        return outcome(result, t, Some(mask), None, None);
    }

    let metrics = t.time("quality_gate", || mask_metrics(&mask)).map_err(|e| PipelineError::stage("quality_gate", e))?;
    let score = quality_score(&metrics);
    let threshold = pipeline.quality_threshold();
    let passed = threshold.is_none_or(|th| score.value >= th);
    result.mask_metrics = Some(metrics);
    result.quality = Some(score);
    result.quality_gate = Some(QualityGateOutcome {
        passed,
        score: score.value,
        threshold,
        gate: cfg.quality_gate,
    });
    if !passed {
        result.rejection = Some(Rejection {
            reason: RejectionReason::LowQuality,
            message: format!(
                "segmentation quality {:.4} below threshold {:.4}",
                score.value,
                threshold.unwrap_or(f64::NAN)
            ),
        });
        return outcome(result, t, Some(mask), None, None);
    }

    let roi = t
        .time("roi", || build_roi(&prepared.canvas, &mask, bundle.train_stats.as_ref(), &cfg.roi))
        .map_err(|e| PipelineError::stage("roi", e))?;

    let image_probs = t.time("image_branch", || image_branch(&roi, backends))?;

    let features = t.time("radiomics", || radiomics_features(&roi, cfg.bin_width))?;
    let radiomics_probs = t.time("radiomics_branch", || {
        let selected: Vec<f64> = bundle.selection.iter().map(|&i| features.values[i]).collect();
        let scaled = bundle
            .radiomics_scaler
            .apply(&selected)
            .map_err(|e| PipelineError::stage("radiomics_branch", e))?;
        dense_forward(&bundle.dense, &scaled, false, None).map_err(backend_err("radiomics_branch"))
    })?;

    let (probabilities, class) = t.time("aggregation", || {
        let mut x = image_probs.to_array().to_vec();
        x.extend(radiomics_probs.to_array());
        let p = tree_predict(&bundle.tree, &x).map_err(backend_err("aggregation"))?;
        Ok::<_, PipelineError>((p, decide_class(&p)))
    })?;

    let neural = t.time("feature_extractor", || neural_features(&roi, backends))?;
    let embedding = t.time("embedding", || {
        let scaled = bundle.neural_scaler.apply(&neural).map_err(|e| PipelineError::stage("embedding", e))?;
        let reduced = bundle.pca.transform(&scaled).map_err(backend_err("embedding"))?;
        knn_embed(&reduced, &bundle.knn.features, &bundle.knn.coords, cfg.knn_k).map_err(backend_err("embedding"))
    })?;
    let subtype = t.time("subtype", || gmm_predict_subtype(&bundle.gmm, embedding, class));

    let saliency = match cfg.saliency {
        Some(s) => {
            let h = Backends::require(&backends.classifier, "saliency")?;
            let map = t.time("saliency", || occlusion_saliency(&roi, &h, s.patch, s.stride, class))?;
            result.saliency = Some(SaliencyInfo {
                target: class,
                grid_w: map.grid_w,
                grid_h: map.grid_h,
                patch: map.patch,
                stride: map.stride,
                baseline: map.baseline,
                png_sha256: sha256_hex(&map.to_raster(roi.size).to_png()),
            });
            Some(map)
        }
        None => None,
    };

    result.classification = Some(Classification {
        probabilities,
        class,
        image_branch: image_probs,
        radiomics_branch: radiomics_probs,
        subtype,
        embedding,
        degraded_segments: features.degraded_segments.clone(),
        roi_normalization: roi.norm_params.clone(),
    });
    outcome(result, t, Some(mask), Some(roi), saliency)
}
