//! Single-case orchestration and corpus workflows: cleaning, density-guided
//! hold-out sampling, occlusion saliency and model training.

mod backends;
mod bundle;
mod canonical;
mod case;
mod clean;
mod config;
mod manifest;
mod saliency;
mod sample;
pub mod synthetic;
mod train;

pub use backends::*;
pub use bundle::*;
pub use canonical::canonical_json;
pub use case::*;
pub use clean::*;
pub use config::*;
pub use manifest::*;
pub use saliency::*;
pub use sample::*;
pub use train::*;

use crate::imaging::ImagingError;
use crate::models::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Decode(#[from] ImagingError),
    #[error("{stage}: {source}")]
    Backend {
        stage: &'static str,
        #[source]
        source: ModelError,
    },
    #[error("{stage}: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("model bundle: {0}")]
    Bundle(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("class {class} in dataset {dataset} has {available} cases, quota is {quota}")]
    InsufficientClassCases {
        dataset: String,
        class: crate::labels::Class,
        available: usize,
        quota: usize,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    pub(crate) fn stage(stage: &'static str, e: impl std::fmt::Display) -> Self {
        Self::Stage {
            stage,
            message: e.to_string(),
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
