//! Deterministic synthetic chest radiographs for fixtures, demos and tests.
//!
//! Lungs are two dark ellipses placed where the mock segmentation backend
//! looks for them (after fit-pad onto a 512 canvas). Each class brightens a
//! different third of the lung fields, and the variant adds a column
//! stripe pattern so that variants separate in the neural feature space.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    clean_dataset, demo_train_config, extract_corpus, fit_bundle, Backends, CleaningReport, DatasetManifest, ManifestEntry,
    ModelBundle, PipelineConfig, PipelineError, TrainingReport,
};
use crate::imaging::{FitPad, RasterImage};
use crate::labels::Class;
use crate::models::MockLungGeometry;

const CANVAS: f64 = 512.0;

/// Parameters of the shipped demo bundle and fixture radiograph.
pub const DEMO_PER_VARIANT: usize = 4;
pub const DEMO_SIZE: usize = 600;
pub const DEMO_SEED: u64 = 1;

/// The documented fixture radiograph: covid pattern, variant 2, 600x600.
pub fn fixture_spec() -> SyntheticSpec {
    SyntheticSpec::new(Class::Covid, 1, DEMO_SIZE, 2024)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub class: Class,
    /// 0..3; selects the stripe period.
    pub variant: u8,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(class: Class, variant: u8, size: usize, seed: u64) -> Self {
        Self {
            class,
            variant,
            width: size,
            height: size,
            seed,
        }
    }
}

/// Renders one radiograph in `[0, 1]`.
pub fn synthetic_chest(spec: &SyntheticSpec) -> RasterImage {
    let (w, h) = (spec.width, spec.height);
    let fit = FitPad::compute(w, h, CANVAS as usize, CANVAS as usize);
    let sx = fit.content_w as f64 / w as f64;
    let sy = fit.content_h as f64 / h as f64;
    let g = MockLungGeometry::default();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ ((spec.class.index() as u64) << 32) ^ ((spec.variant as u64) << 40));
    let amp = 0.18 + 0.08 * rng.random::<f64>();
    let phase = rng.random::<f64>() * std::f64::consts::TAU;
    let period = [9.0, 17.0, 31.0][spec.variant as usize % 3];
    let noise: Vec<f64> = (0..w * h).map(|_| rng.random::<f64>() - 0.5).collect();
    let band_of = |cy: f64| {
        let top = g.left_center[1] - g.semi_axes[1];
        (((cy - top) / (2.0 * g.semi_axes[1]) * 3.0).floor() as isize).clamp(0, 2) as usize
    };
    RasterImage::from_fn(w, h, |x, y| {
        let cx = fit.pad_left as f64 + (x as f64 + 0.5) * sx;
        let cy = fit.pad_top as f64 + (y as f64 + 0.5) * sy;
        let n = noise[y * w + x];
        let in_lung = [g.left_center, g.right_center].iter().any(|c| {
            let dx = (cx - c[0]) / g.semi_axes[0];
            let dy = (cy - c[1]) / g.semi_axes[1];
            dx * dx + dy * dy <= 1.0
        });
        let edge = (cx / CANVAS - 0.5).abs().max((cy / CANVAS - 0.5).abs());
        if !in_lung {
            let body = if edge < 0.47 { 0.62 + 0.1 * (cy / CANVAS) } else { 0.08 };
            return body + 0.03 * n;
        }
        let mut v = 0.22 + 0.04 * n;
        if band_of(cy) == spec.class.index() {
            v += amp;
        }
        v += 0.05 * (1.0 + (cx / period + phase).sin());
        v
    })
}

pub fn synthetic_png(spec: &SyntheticSpec) -> Vec<u8> {
    synthetic_chest(spec).to_png()
}

/// Writes `per_variant` images for every class and variant of every dataset
/// into `dir` and returns the manifest (saved as `manifest.jsonl`).
pub fn write_synthetic_corpus(
    dir: &Path,
    datasets: &[&str],
    per_variant: usize,
    size: usize,
    seed: u64,
) -> Result<DatasetManifest, PipelineError> {
    fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    let mut entries = Vec::new();
    let mut k = 0u64;
    for ds in datasets {
        for class in Class::ALL {
            for variant in 0..3u8 {
                for j in 0..per_variant {
                    let id = format!("{ds}-{}{}-{j:04}", class.letter(), variant + 1);
                    let file = format!("{id}.png");
                    let spec = SyntheticSpec::new(class, variant, size, seed.wrapping_add(k));
                    k += 1;
                    let path = dir.join(&file);
                    fs::write(&path, synthetic_png(&spec)).map_err(|e| PipelineError::io(&path, e))?;
                    let mut e = ManifestEntry::new(id, *ds, Some(class), file);
                    e.synthetic = true;
                    entries.push(e);
                }
            }
        }
    }
    let manifest = DatasetManifest::new(entries, dir)?;
    manifest.save(&dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

#[derive(Debug, Clone)]
pub struct DemoBuild {
    pub bundle: ModelBundle,
    pub manifest: DatasetManifest,
    pub cleaning: CleaningReport,
    pub training: TrainingReport,
}

/// Renders a synthetic corpus into `dir`, cleans it with the given
/// backends and fits a small bundle on the survivors. The bundle carries
/// the corpus quality fence.
pub fn build_demo_bundle(
    dir: &Path,
    per_variant: usize,
    size: usize,
    seed: u64,
    cfg: &PipelineConfig,
    backends: &Backends,
) -> Result<DemoBuild, PipelineError> {
    let manifest = write_synthetic_corpus(dir, &["synthetic"], per_variant, size, seed)?;
    let (cleaned, cleaning) = clean_dataset(&manifest, cfg, backends)?;
    let corpus = extract_corpus(&cleaned, cfg, backends, true)?;
    let mut tcfg = demo_train_config(corpus.ids.len());
    tcfg.dense.seed = seed;
    tcfg.tree.seed = seed;
    tcfg.gmm.seed = seed;
    let threshold = cleaning.fence.map(|f| f.threshold);
    let (bundle, training) = fit_bundle(&corpus, &tcfg, cfg.knn_k, threshold)?;
    Ok(DemoBuild {
        bundle,
        manifest: cleaned,
        cleaning,
        training,
    })
}
