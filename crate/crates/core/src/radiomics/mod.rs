//! Radiomic feature extraction per lung band, Kruskal–Wallis feature ranking
//! and feature scaling.

mod catalog;
mod discretize;
mod extract;
mod first_order;
mod glcm;
mod runs;
mod scaler;
mod selection;

pub use catalog::{Family, FeatureCatalog, FeatureDescriptor, Segment};
pub use discretize::{discretize, LevelImage, DIRECTIONS};
pub use extract::{
    extract_case_features, extract_raster_features, FeatureVector, AUGMENT_BIN_WIDTH, DEFAULT_BIN_WIDTH,
};
pub use first_order::{extract_first_order, FIRST_ORDER_NAMES};
pub use glcm::{extract_glcm, glcm_features, glcm_matrix, GLCM_NAMES};
pub use runs::{
    extract_gldm, extract_glrlm, extract_glszm, extract_ngtdm, glrlm_matrix, glszm_matrix, SizeMatrix,
    GLDM_NAMES, GLRLM_NAMES, GLSZM_NAMES, NGTDM_NAMES,
};
pub use scaler::FeatureScaler;
pub use selection::{
    kruskal_wallis, rank_features, select_features, FeatureRank, KruskalWallis, SelectionReport,
    DEFAULT_CAP, DEFAULT_MIN_ETA,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RadiomicsError {
    #[error("segment has no pixels")]
    EmptySegment,
    #[error("fewer than two non-empty groups")]
    DegenerateGroups,
    #[error("need at least {needed} cases, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("expected width {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("feature catalog: {0}")]
    Catalog(String),
}
