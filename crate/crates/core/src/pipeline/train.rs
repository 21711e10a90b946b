use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::case::{image_branch, neural_features, prepare, radiomics_features, segment, size_gate, Timer};
use super::{Backends, DatasetManifest, ModelBundle, PipelineConfig, PipelineError};
use crate::labels::Class;
use crate::models::{
    dense_forward, dense_train, gmm_fit, pca_fit, tree_fit, DenseTrainConfig, GmmConfig, KnnEmbedder, TreeConfig,
};
use crate::radiomics::{rank_features, FeatureCatalog, FeatureScaler, SelectionReport, DEFAULT_CAP, DEFAULT_MIN_ETA};
use crate::segmentation::{build_roi, RoiImage, TrainStats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub min_eta: f64,
    pub max_features: usize,
    pub dense: DenseTrainConfig,
    pub tree: TreeConfig,
    pub gmm: GmmConfig,
    pub pca_variance: f64,
    /// Fit per-pixel ROI statistics on the corpus and apply them.
    pub fit_train_stats: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            min_eta: DEFAULT_MIN_ETA,
            max_features: DEFAULT_CAP,
            dense: DenseTrainConfig::default(),
            tree: TreeConfig::default(),
            gmm: GmmConfig::default(),
            pca_variance: 0.9,
            fit_train_stats: true,
        }
    }
}

/// Per-case inputs to every trainable model, in manifest order of the cases
/// that made it through segmentation and the size gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusFeatures {
    pub ids: Vec<String>,
    pub classes: Vec<Class>,
    pub radiomics: Vec<Vec<f64>>,
    pub image_probs: Vec<[f64; 3]>,
    pub neural: Vec<Vec<f64>>,
    /// Manifest coordinates, when present.
    pub coords: Vec<Option<[f64; 2]>>,
    #[serde(skip)]
    pub train_stats: Option<TrainStats>,
    /// `(id, reason)` of labeled cases left out.
    pub skipped: Vec<(String, String)>,
}

fn case_roi(
    manifest: &DatasetManifest,
    i: usize,
    cfg: &PipelineConfig,
    backends: &Backends,
) -> Result<RoiImage, PipelineError> {
    let e = &manifest.entries[i];
    let bytes = manifest.read_image(e)?;
    let mut t = Timer::default();
    let prepared = prepare(&bytes, None, cfg, backends, &mut t)?;
    let mask = segment(&prepared, cfg, backends, &mut t)?
        .ok_or_else(|| PipelineError::stage("segmentation", "no lung region"))?;
    let gate = size_gate(&mask, &prepared, cfg.min_lung_dim);
    if !gate.passed {
        return Err(PipelineError::stage(
            "size_gate",
            format!("lung region {}x{} px", gate.lung_width, gate.lung_height),
        ));
    }
    build_roi(&prepared.canvas, &mask, None, &cfg.roi).map_err(|e| PipelineError::stage("roi", e))
}

/// Builds ROIs for every labeled case, fits the ROI statistics (optional),
/// and runs the image classifier, feature extractor and radiomics.
pub fn extract_corpus(
    manifest: &DatasetManifest,
    cfg: &PipelineConfig,
    backends: &Backends,
    fit_train_stats: bool,
) -> Result<CorpusFeatures, PipelineError> {
    cfg.validate()?;
    let labeled: Vec<(usize, Class)> = manifest
        .entries
        .iter()
        .enumerate()
        .filter_map(|(i, e)| e.class.map(|c| (i, c)))
        .collect();
    let rois: Vec<Result<RoiImage, PipelineError>> =
        labeled.par_iter().map(|&(i, _)| case_roi(manifest, i, cfg, backends)).collect();
    let mut kept = Vec::new();
    let mut skipped = Vec::new();
    for (&(i, c), r) in labeled.iter().zip(rois) {
        match r {
            Ok(roi) => kept.push((i, c, roi)),
            Err(e) => skipped.push((manifest.entries[i].id.clone(), e.to_string())),
        }
    }
    if kept.is_empty() {
        return Err(PipelineError::Manifest("no labeled case produced a usable ROI".into()));
    }
    let stats = if fit_train_stats {
        Some(TrainStats::fit(cfg.roi.size, kept.iter().map(|(_, _, r)| &r.lung)).map_err(|e| PipelineError::stage("roi", e))?)
    } else {
        None
    };
    type Row = (Vec<f64>, [f64; 3], Vec<f64>);
    let rows: Vec<Result<Row, PipelineError>> = kept
        .par_iter_mut()
        .map(|(_, _, roi)| {
            roi.normalize(stats.as_ref());
            let f = radiomics_features(roi, cfg.bin_width)?;
            let p = image_branch(roi, backends)?;
            let n = neural_features(roi, backends)?;
            Ok((f.values, p.to_array(), n))
        })
        .collect();
    let mut out = CorpusFeatures {
        ids: Vec::new(),
        classes: Vec::new(),
        radiomics: Vec::new(),
        image_probs: Vec::new(),
        neural: Vec::new(),
        coords: Vec::new(),
        train_stats: stats,
        skipped,
    };
    for ((i, c, _), row) in kept.iter().zip(rows) {
        let e = &manifest.entries[*i];
        match row {
            Ok((f, p, n)) => {
                out.ids.push(e.id.clone());
                out.classes.push(*c);
                out.radiomics.push(f);
                out.image_probs.push(p);
                out.neural.push(n);
                out.coords.push(e.coords);
            }
            Err(err) => out.skipped.push((e.id.clone(), err.to_string())),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub cases: usize,
    pub skipped: Vec<(String, String)>,
    pub selection: SelectionReport,
    pub dense_losses: Vec<f64>,
    pub tree_depth: usize,
    pub tree_leaves: usize,
    pub pca_components: usize,
    /// BIC of the selected mixture per class.
    pub gmm_bic: [f64; 3],
    /// Embedding coordinates used for the k-NN reference set and the mixtures.
    pub coords: Vec<(String, [f64; 2])>,
}

/// Fits every bundle artifact from extracted corpus features. Coordinates
/// come from the manifest when every case has them, otherwise from the
/// first two principal components.
pub fn fit_bundle(
    corpus: &CorpusFeatures,
    tcfg: &TrainConfig,
    knn_k: usize,
    quality_threshold: Option<f64>,
) -> Result<(ModelBundle, TrainingReport), PipelineError> {
    let fail = |stage| move |e: crate::radiomics::RadiomicsError| PipelineError::stage(stage, e);
    let model = |stage| move |source| PipelineError::Backend { stage, source };

    let names = FeatureCatalog::builtin().names();
    let selection =
        rank_features(&corpus.radiomics, &corpus.classes, &names, tcfg.min_eta, tcfg.max_features).map_err(fail("selection"))?;
    let selected = selection.selected_indices();
    if selected.is_empty() {
        return Err(PipelineError::stage("selection", "no radiomics feature reached the effect-size floor"));
    }
    let picked: Vec<Vec<f64>> = corpus
        .radiomics
        .iter()
        .map(|r| selected.iter().map(|&i| r[i]).collect())
        .collect();
    let radiomics_scaler = FeatureScaler::fit(&picked).map_err(fail("radiomics_scaler"))?;
    let scaled = radiomics_scaler.apply_matrix(&picked).map_err(fail("radiomics_scaler"))?;
    let (dense, dense_report) = dense_train(&scaled, &corpus.classes, &tcfg.dense).map_err(model("dense"))?;

    let mut tree_x = Vec::with_capacity(scaled.len());
    for (s, p) in scaled.iter().zip(&corpus.image_probs) {
        let r = dense_forward(&dense, s, false, None).map_err(model("dense"))?;
        let mut row = p.to_vec();
        row.extend(r.to_array());
        tree_x.push(row);
    }
    let tree = tree_fit(&tree_x, &corpus.classes, &tcfg.tree).map_err(model("tree"))?;

    let neural_scaler = FeatureScaler::fit(&corpus.neural).map_err(fail("neural_scaler"))?;
    let neural = neural_scaler.apply_matrix(&corpus.neural).map_err(fail("neural_scaler"))?;
    let pca = pca_fit(&neural, tcfg.pca_variance).map_err(model("pca"))?;
    let reduced = neural
        .iter()
        .map(|v| pca.transform(v))
        .collect::<Result<Vec<_>, _>>()
        .map_err(model("pca"))?;
    let coords: Vec<[f64; 2]> = if corpus.coords.iter().all(Option::is_some) {
        corpus.coords.iter().map(|c| c.expect("checked")).collect()
    } else {
        reduced
            .iter()
            .map(|r| [r.first().copied().unwrap_or(0.0), r.get(1).copied().unwrap_or(0.0)])
            .collect()
    };
    let knn = KnnEmbedder::new(knn_k, reduced, coords.clone()).map_err(model("knn"))?;

    let mut by_class: [Vec<[f64; 2]>; 3] = Default::default();
    for (c, p) in corpus.classes.iter().zip(&coords) {
        by_class[c.index()].push(*p);
    }
    let gmm = gmm_fit(&by_class, &tcfg.gmm).map_err(model("gmm"))?;

    let bundle = ModelBundle {
        train_stats: corpus.train_stats.clone(),
        selection: selected,
        radiomics_scaler,
        dense,
        tree,
        neural_scaler,
        pca,
        knn,
        gmm,
        quality_threshold,
    };
    bundle.validate()?;
    let report = TrainingReport {
        cases: corpus.ids.len(),
        skipped: corpus.skipped.clone(),
        selection,
        dense_losses: dense_report.epoch_losses,
        tree_depth: bundle.tree.depth(),
        tree_leaves: bundle.tree.leaves().count(),
        pca_components: bundle.pca.n_components,
        gmm_bic: [0, 1, 2].map(|c| bundle.gmm.classes[c].bic),
        coords: corpus.ids.iter().cloned().zip(coords).collect(),
    };
    Ok((bundle, report))
}

/// Small-model settings used for the demo bundle and tests: narrow dense
/// layers, few epochs, leaf size scaled to the corpus.
pub fn demo_train_config(cases: usize) -> TrainConfig {
    TrainConfig {
        dense: DenseTrainConfig {
            widths: vec![32, 16, 3],
            epochs: 40,
            batch: 16,
            lr: 3e-3,
            dropout: 0.0,
            class_weights: [1.0, 1.0, 1.0],
            ..DenseTrainConfig::default()
        },
        tree: TreeConfig {
            min_leaf: (cases / 20).max(2),
            class_weights: [1.0, 1.0, 1.0],
            ..TreeConfig::default()
        },
        gmm: GmmConfig {
            restarts: 10,
            ..GmmConfig::default()
        },
        max_features: 40,
        ..TrainConfig::default()
    }
}
