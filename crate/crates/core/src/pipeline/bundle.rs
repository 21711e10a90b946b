use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::container::sha256_hex;
use crate::models::{DecisionTreeModel, DenseNetParams, GmmModel2D, KnnEmbedder, PcaModel};
use crate::radiomics::{FeatureCatalog, FeatureScaler};
use crate::segmentation::TrainStats;

pub const BUNDLE_FORMAT: &str = "circa-bundle";
pub const BUNDLE_VERSION: u32 = 1;
const MANIFEST_FILE: &str = "bundle.json";

/// Every fitted artifact the single-case pipeline needs.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub train_stats: Option<TrainStats>,
    /// Catalog indices fed to the radiomics scaler, in selection order.
    pub selection: Vec<usize>,
    pub radiomics_scaler: FeatureScaler,
    pub dense: DenseNetParams,
    pub tree: DecisionTreeModel,
    pub neural_scaler: FeatureScaler,
    pub pca: PcaModel,
    pub knn: KnnEmbedder,
    pub gmm: GmmModel2D,
    /// Corpus quality fence from cleaning.
    pub quality_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub format: String,
    pub version: u32,
    pub quality_threshold: Option<f64>,
    pub selection: Vec<usize>,
    pub selected_features: Vec<String>,
    pub artifacts: BTreeMap<String, ArtifactEntry>,
}

impl ModelBundle {
    fn encoded(&self) -> Vec<(&'static str, Vec<u8>)> {
        let mut out = vec![
            ("radiomics_scaler", self.radiomics_scaler.to_bytes()),
            ("dense", self.dense.to_bytes()),
            ("tree", self.tree.to_bytes()),
            ("neural_scaler", self.neural_scaler.to_bytes()),
            ("pca", self.pca.to_bytes()),
            ("knn", self.knn.to_bytes()),
            ("gmm", self.gmm.to_bytes()),
        ];
        if let Some(s) = &self.train_stats {
            out.insert(0, ("train_stats", s.to_bytes()));
        }
        out
    }

    pub fn manifest(&self) -> BundleManifest {
        let catalog = FeatureCatalog::builtin();
        let artifacts = self
            .encoded()
            .into_iter()
            .map(|(name, bytes)| {
                (
                    name.to_string(),
                    ArtifactEntry {
                        file: format!("{name}.bin"),
                        sha256: sha256_hex(&bytes),
                        bytes: bytes.len() as u64,
                    },
                )
            })
            .collect();
        BundleManifest {
            format: BUNDLE_FORMAT.into(),
            version: BUNDLE_VERSION,
            quality_threshold: self.quality_threshold,
            selection: self.selection.clone(),
            selected_features: self.selection.iter().map(|&i| catalog.names()[i].clone()).collect(),
            artifacts,
        }
    }

    /// Checks that the artifacts chain: selection → scaler → dense input,
    /// neural scaler → PCA → k-NN.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Bundle(m));
        if self.selection.iter().any(|&i| i >= FeatureCatalog::DIMENSION) {
            return bad("selection index outside the feature catalog".into());
        }
        if self.radiomics_scaler.input_width() != self.selection.len() {
            return bad(format!(
                "radiomics scaler expects {} inputs, selection has {}",
                self.radiomics_scaler.input_width(),
                self.selection.len()
            ));
        }
        if self.dense.input_width() != self.radiomics_scaler.output_width() {
            return bad(format!(
                "dense input width {} != scaled feature width {}",
                self.dense.input_width(),
                self.radiomics_scaler.output_width()
            ));
        }
        if self.tree.n_features != 6 {
            return bad(format!("aggregation tree expects {} features, need 6", self.tree.n_features));
        }
        if self.pca.dim() != self.neural_scaler.output_width() {
            return bad("PCA input width does not match the neural scaler".into());
        }
        if self.knn.dim() != self.pca.n_components {
            return bad("k-NN training vectors do not match the PCA width".into());
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<BundleManifest, PipelineError> {
        fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        let manifest = self.manifest();
        for (name, bytes) in self.encoded() {
            let path = dir.join(&manifest.artifacts[name].file);
            fs::write(&path, bytes).map_err(|e| PipelineError::io(&path, e))?;
        }
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        fs::write(&path, text).map_err(|e| PipelineError::io(&path, e))?;
        Ok(manifest)
    }

    /// Loads a bundle directory, verifying every artifact checksum.
    pub fn load(dir: &Path) -> Result<(Self, BundleManifest), PipelineError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| PipelineError::io(&path, e))?;
        let manifest: BundleManifest =
            serde_json::from_str(&text).map_err(|e| PipelineError::Bundle(format!("{}: {e}", path.display())))?;
        if manifest.format != BUNDLE_FORMAT || manifest.version != BUNDLE_VERSION {
            return Err(PipelineError::Bundle(format!(
                "unsupported bundle {} v{}",
                manifest.format, manifest.version
            )));
        }
        let read = |name: &str| -> Result<Vec<u8>, PipelineError> {
            let entry = manifest
                .artifacts
                .get(name)
                .ok_or_else(|| PipelineError::Bundle(format!("artifact {name} missing from manifest")))?;
            let path = dir.join(&entry.file);
            let bytes = fs::read(&path).map_err(|e| PipelineError::io(&path, e))?;
            if sha256_hex(&bytes) != entry.sha256 {
                return Err(PipelineError::Bundle(format!("artifact {name}: checksum mismatch")));
            }
            Ok(bytes)
        };
        let model = |name: &str, e: &dyn std::fmt::Display| PipelineError::Bundle(format!("artifact {name}: {e}"));
        let train_stats = if manifest.artifacts.contains_key("train_stats") {
            let b = read("train_stats")?;
            Some(TrainStats::from_bytes(&b).map_err(|e| model("train_stats", &e))?)
        } else {
            None
        };
        let bundle = Self {
            train_stats,
            selection: manifest.selection.clone(),
            radiomics_scaler: FeatureScaler::from_bytes(&read("radiomics_scaler")?)
                .map_err(|e| model("radiomics_scaler", &e))?,
            dense: DenseNetParams::from_bytes(&read("dense")?).map_err(|e| model("dense", &e))?,
            tree: DecisionTreeModel::from_bytes(&read("tree")?).map_err(|e| model("tree", &e))?,
            neural_scaler: FeatureScaler::from_bytes(&read("neural_scaler")?).map_err(|e| model("neural_scaler", &e))?,
            pca: PcaModel::from_bytes(&read("pca")?).map_err(|e| model("pca", &e))?,
            knn: KnnEmbedder::from_bytes(&read("knn")?).map_err(|e| model("knn", &e))?,
            gmm: GmmModel2D::from_bytes(&read("gmm")?).map_err(|e| model("gmm", &e))?,
            quality_threshold: manifest.quality_threshold,
        };
        bundle.validate()?;
        Ok((bundle, manifest))
    }
}
