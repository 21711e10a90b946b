use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::labels::{Class, Subtype};

pub const MANIFEST_SCHEMA: u32 = 1;

fn schema_default() -> u32 {
    MANIFEST_SCHEMA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    #[serde(default = "schema_default")]
    pub schema: u32,
    pub id: String,
    pub dataset: String,
    #[serde(default)]
    pub class: Option<Class>,
    /// Image path, relative to the manifest's directory unless absolute.
    pub file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subtype: Option<Subtype>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coords: Option<[f64; 2]>,
    #[serde(default)]
    pub synthetic: bool,
}

impl ManifestEntry {
    pub fn new(id: impl Into<String>, dataset: impl Into<String>, class: Option<Class>, file: impl Into<String>) -> Self {
        Self {
            schema: MANIFEST_SCHEMA,
            id: id.into(),
            dataset: dataset.into(),
            class,
            file: file.into(),
            subtype: None,
            coords: None,
            synthetic: false,
        }
    }
}

/// Cases in file order; ids are unique.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory that relative `file` paths resolve against.
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>, root: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        let mut seen = HashSet::new();
        for e in &entries {
            if e.schema != MANIFEST_SCHEMA {
                return Err(PipelineError::Manifest(format!("case {}: unsupported schema {}", e.id, e.schema)));
            }
            if !seen.insert(e.id.as_str()) {
                return Err(PipelineError::Manifest(format!("duplicate case id {}", e.id)));
            }
            if let (Some(c), Some(s)) = (e.class, e.subtype) {
                if s.class != c {
                    return Err(PipelineError::Manifest(format!("case {}: subtype {s} does not belong to class {c}", e.id)));
                }
            }
        }
        Ok(Self {
            entries,
            root: root.into(),
        })
    }

    pub fn parse_jsonl(text: &str, root: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: ManifestEntry =
                serde_json::from_str(line).map_err(|e| PipelineError::Manifest(format!("line {}: {e}", i + 1)))?;
            entries.push(e);
        }
        Self::new(entries, root)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse_jsonl(&text, root)
    }

    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("entry serializes") + "\n")
            .collect()
    }

    /// Writes the entries; relative file paths are rewritten against the
    /// target directory when it differs from `root`.
    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let rebased = if dir == self.root {
            self.clone()
        } else {
            let entries = self
                .entries
                .iter()
                .map(|e| ManifestEntry {
                    file: self.resolve(e).to_string_lossy().into_owned(),
                    ..e.clone()
                })
                .collect();
            Self {
                entries,
                root: dir,
            }
        };
        fs::write(path, rebased.to_jsonl()).map_err(|e| PipelineError::io(path, e))
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        let p = Path::new(&entry.file);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn read_image(&self, entry: &ManifestEntry) -> Result<Vec<u8>, PipelineError> {
        let path = self.resolve(entry);
        fs::read(&path).map_err(|e| PipelineError::io(&path, e))
    }

    pub fn with_entries(&self, entries: Vec<ManifestEntry>) -> Self {
        Self {
            entries,
            root: self.root.clone(),
        }
    }

    pub fn labeled(&self) -> impl Iterator<Item = (&ManifestEntry, Class)> {
        self.entries.iter().filter_map(|e| e.class.map(|c| (e, c)))
    }
}
