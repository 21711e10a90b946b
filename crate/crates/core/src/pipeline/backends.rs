use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::models::{
    BackendDescriptor, BackendKind, Concurrency, MockClassifier, MockFeatureExtractor, MockSegmentation,
    MockSuperResolution, ModelBackendHandle, ModelError, ProcessBackend, NEURAL_FEATURE_WIDTH,
};

/// The four neural slots. A `None` slot makes stages that need it fail with
/// `BackendUnavailable`, except super-resolution, which falls back to
/// bilinear upscaling.
#[derive(Debug, Clone, Default)]
pub struct Backends {
    pub segmentation: Option<ModelBackendHandle>,
    pub classifier: Option<ModelBackendHandle>,
    pub feature_extractor: Option<ModelBackendHandle>,
    pub super_resolution: Option<ModelBackendHandle>,
}

impl Backends {
    /// Deterministic stand-ins for every slot.
    pub fn mock(canvas: usize, roi: usize, sr_patch: usize) -> Self {
        Self {
            segmentation: Some(ModelBackendHandle::new(MockSegmentation::new(canvas))),
            classifier: Some(ModelBackendHandle::new(MockClassifier::new(roi))),
            feature_extractor: Some(ModelBackendHandle::new(MockFeatureExtractor::new(roi))),
            super_resolution: Some(ModelBackendHandle::new(MockSuperResolution::new(sr_patch))),
        }
    }

    pub fn slots(&self) -> [(&'static str, Option<&ModelBackendHandle>); 4] {
        [
            ("segmentation", self.segmentation.as_ref()),
            ("classifier", self.classifier.as_ref()),
            ("feature_extractor", self.feature_extractor.as_ref()),
            ("super_resolution", self.super_resolution.as_ref()),
        ]
    }

    pub(crate) fn require(slot: &Option<ModelBackendHandle>, stage: &'static str) -> Result<ModelBackendHandle, PipelineError> {
        slot.clone().ok_or(PipelineError::Backend {
            stage,
            source: ModelError::BackendUnavailable(format!("no {stage} backend configured")),
        })
    }
}

/// How to construct one backend slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BackendSpec {
    Mock,
    None,
    /// External command speaking the tensor wire format over stdin/stdout.
    Process {
        program: PathBuf,
        #[serde(default)]
        args: Vec<String>,
        #[serde(default)]
        serialized: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendsConfig {
    pub segmentation: BackendSpec,
    pub classifier: BackendSpec,
    pub feature_extractor: BackendSpec,
    pub super_resolution: BackendSpec,
}

impl Default for BackendsConfig {
    fn default() -> Self {
        Self {
            segmentation: BackendSpec::Mock,
            classifier: BackendSpec::Mock,
            feature_extractor: BackendSpec::Mock,
            super_resolution: BackendSpec::Mock,
        }
    }
}

impl BackendsConfig {
    pub fn build(&self, canvas: usize, roi: usize, sr_patch: usize) -> Backends {
        let mocks = Backends::mock(canvas, roi, sr_patch);
        let make = |spec: &BackendSpec, mock: Option<ModelBackendHandle>, id: &str, kind, input: Vec<usize>, output: Vec<usize>| match spec {
            BackendSpec::Mock => mock,
            BackendSpec::None => None,
            BackendSpec::Process {
                program,
                args,
                serialized,
            } => Some(ModelBackendHandle::new(ProcessBackend::new(
                BackendDescriptor {
                    id: id.to_string(),
                    kind,
                    input_shape: input,
                    output_shape: output,
                    concurrency: if *serialized {
                        Concurrency::Serialized
                    } else {
                        Concurrency::Concurrent
                    },
                },
                program.clone(),
                args.clone(),
            ))),
        };
        Backends {
            segmentation: make(
                &self.segmentation,
                mocks.segmentation,
                "segmentation",
                BackendKind::Segmentation,
                vec![canvas, canvas],
                vec![canvas, canvas],
            ),
            classifier: make(
                &self.classifier,
                mocks.classifier,
                "classifier",
                BackendKind::ImageClassifier,
                vec![roi, roi],
                vec![3],
            ),
            feature_extractor: make(
                &self.feature_extractor,
                mocks.feature_extractor,
                "feature_extractor",
                BackendKind::FeatureExtractor,
                vec![roi, roi],
                vec![NEURAL_FEATURE_WIDTH],
            ),
            super_resolution: make(
                &self.super_resolution,
                mocks.super_resolution,
                "super_resolution",
                BackendKind::SuperResolution,
                vec![sr_patch, sr_patch],
                vec![2 * sr_patch, 2 * sr_patch],
            ),
        }
    }
}
