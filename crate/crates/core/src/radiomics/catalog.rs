use serde::{Deserialize, Serialize};

use super::first_order::FIRST_ORDER_NAMES;
use super::glcm::GLCM_NAMES;
use super::runs::{GLDM_NAMES, GLRLM_NAMES, GLSZM_NAMES, NGTDM_NAMES};
use super::RadiomicsError;
use crate::container::sha256_hex;

const BUILTIN: &str = include_str!("../../data/feature_catalog.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Segment {
    UL,
    ML,
    LL,
}

impl Segment {
    /// Top to bottom.
    pub const ALL: [Segment; 3] = [Segment::UL, Segment::ML, Segment::LL];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    FirstOrder,
    Glcm,
    Glrlm,
    Glszm,
    Ngtdm,
    Gldm,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::FirstOrder,
        Family::Glcm,
        Family::Glrlm,
        Family::Glszm,
        Family::Ngtdm,
        Family::Gldm,
    ];

    pub fn feature_names(self) -> &'static [&'static str] {
        match self {
            Family::FirstOrder => &FIRST_ORDER_NAMES,
            Family::Glcm => &GLCM_NAMES,
            Family::Glrlm => &GLRLM_NAMES,
            Family::Glszm => &GLSZM_NAMES,
            Family::Ngtdm => &NGTDM_NAMES,
            Family::Gldm => &GLDM_NAMES,
        }
    }

    fn tag(self) -> &'static str {
        match self {
            Family::FirstOrder => "firstorder",
            Family::Glcm => "glcm",
            Family::Glrlm => "glrlm",
            Family::Glszm => "glszm",
            Family::Ngtdm => "ngtdm",
            Family::Gldm => "gldm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDescriptor {
    pub segment: Segment,
    pub family: Family,
    pub name: String,
}

impl FeatureDescriptor {
    /// Column name such as `ML_glcm_Contrast`.
    pub fn full_name(&self) -> String {
        format!("{:?}_{}_{}", self.segment, self.family.tag(), self.name)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CatalogFile {
    version: u32,
    dimension: usize,
    sha256: String,
    features: Vec<FeatureDescriptor>,
}

/// Ordered feature list; catalog order is the feature-vector order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCatalog {
    pub version: u32,
    pub features: Vec<FeatureDescriptor>,
    pub sha256: String,
}

impl FeatureCatalog {
    pub const DIMENSION: usize = 261;
    pub const PER_SEGMENT: usize = 87;

    /// The catalog shipped with the crate.
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN).expect("bundled feature catalog is valid")
    }

    /// Parses a catalog file, verifying its checksum and that it lists exactly
    /// the features this build computes, in order.
    pub fn from_json(text: &str) -> Result<Self, RadiomicsError> {
        let file: CatalogFile =
            serde_json::from_str(text).map_err(|e| RadiomicsError::Catalog(e.to_string()))?;
        let digest = checksum(&file.features);
        if digest != file.sha256 {
            return Err(RadiomicsError::Catalog("checksum mismatch".into()));
        }
        if file.dimension != file.features.len() || file.features != expected_features() {
            return Err(RadiomicsError::Catalog(
                "catalog does not match the implemented feature set".into(),
            ));
        }
        Ok(Self {
            version: file.version,
            features: file.features,
            sha256: digest,
        })
    }

    pub fn to_json(&self) -> String {
        let file = CatalogFile {
            version: self.version,
            dimension: self.features.len(),
            sha256: self.sha256.clone(),
            features: self.features.clone(),
        };
        serde_json::to_string_pretty(&file).expect("catalog serialization")
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(FeatureDescriptor::full_name).collect()
    }

    pub fn index_of(&self, full_name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.full_name() == full_name)
    }
}

fn checksum(features: &[FeatureDescriptor]) -> String {
    sha256_hex(&serde_json::to_vec(features).expect("descriptor serialization"))
}

/// Feature list in computation order: segments UL, ML, LL; within each the
/// families in [`Family::ALL`] order.
pub(crate) fn expected_features() -> Vec<FeatureDescriptor> {
    let mut out = Vec::with_capacity(FeatureCatalog::DIMENSION);
    for segment in Segment::ALL {
        for family in Family::ALL {
            for &name in family.feature_names() {
                out.push(FeatureDescriptor {
                    segment,
                    family,
                    name: name.to_string(),
                });
            }
        }
    }
    out
}
