//! Content-addressed blobs plus an append-only JSON-lines case index.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use circa_core::container::sha256_hex;
use circa_core::imaging::ImageFormat;
use circa_core::labels::Class;
use circa_core::pipeline::{DatasetManifest, ManifestEntry, PipelineResult};
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::ServiceError;

const INDEX_FILE: &str = "cases.jsonl";
const BLOB_DIR: &str = "blobs";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobRef {
    pub sha256: String,
    pub bytes: u64,
    pub media_type: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Submitter {
    Anonymous,
    Registered { user: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub id: Uuid,
    pub submitted_at: DateTime<Utc>,
    pub image: BlobRef,
    pub format: ImageFormat,
    pub result: PipelineResult,
    pub submitter: Submitter,
    /// Only for registered submissions.
    pub verified_label: Option<Class>,
    pub notes: Option<String>,
    /// Artifact kind (`mask`, `roi`, `saliency`) → PNG blob.
    pub artifacts: BTreeMap<String, BlobRef>,
}

#[derive(Default)]
struct Index {
    records: Vec<Arc<CaseRecord>>,
    by_id: HashMap<Uuid, usize>,
}

pub struct Store {
    root: PathBuf,
    index: RwLock<Index>,
    /// Single writer for the index file; held across append and publish.
    writer: Mutex<File>,
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> ServiceError + '_ {
    move |e| ServiceError::Storage(format!("{}: {e}", path.display()))
}

impl Store {
    pub fn open(root: &Path) -> Result<Self, ServiceError> {
        let blobs = root.join(BLOB_DIR);
        fs::create_dir_all(&blobs).map_err(io(&blobs))?;
        let path = root.join(INDEX_FILE);
        let mut index = Index::default();
        if path.exists() {
            let f = File::open(&path).map_err(io(&path))?;
            for (n, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(io(&path))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: CaseRecord = serde_json::from_str(&line)
                    .map_err(|e| ServiceError::Storage(format!("{} line {}: {e}", path.display(), n + 1)))?;
                index.by_id.insert(rec.id, index.records.len());
                index.records.push(Arc::new(rec));
            }
        }
        let writer = OpenOptions::new().create(true).append(true).open(&path).map_err(io(&path))?;
        Ok(Self {
            root: root.to_path_buf(),
            index: RwLock::new(index),
            writer: Mutex::new(writer),
        })
    }

    pub fn blob_path(&self, sha256: &str) -> PathBuf {
        self.root.join(BLOB_DIR).join(sha256)
    }

    pub fn put_blob(&self, bytes: &[u8], media_type: &str) -> Result<BlobRef, ServiceError> {
        let sha = sha256_hex(bytes);
        let path = self.blob_path(&sha);
        if !path.exists() {
            let tmp = self.root.join(BLOB_DIR).join(format!(".{sha}.{}", Uuid::new_v4()));
            fs::write(&tmp, bytes).map_err(io(&tmp))?;
            fs::rename(&tmp, &path).map_err(io(&path))?;
        }
        Ok(BlobRef {
            sha256: sha,
            bytes: bytes.len() as u64,
            media_type: media_type.to_string(),
        })
    }

    pub fn get_blob(&self, blob: &BlobRef) -> Result<Vec<u8>, ServiceError> {
        let path = self.blob_path(&blob.sha256);
        fs::read(&path).map_err(io(&path))
    }

    pub fn append(&self, record: CaseRecord) -> Result<Arc<CaseRecord>, ServiceError> {
        if record.verified_label.is_some() && record.submitter == Submitter::Anonymous {
            return Err(ServiceError::Storage("anonymous submissions cannot carry a verified label".into()));
        }
        let line = serde_json::to_string(&record).map_err(|e| ServiceError::Storage(e.to_string()))? + "\n";
        let mut w = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        if self.get(&record.id).is_some() {
            return Err(ServiceError::Storage(format!("duplicate case id {}", record.id)));
        }
        let path = self.root.join(INDEX_FILE);
        w.write_all(line.as_bytes()).map_err(io(&path))?;
        w.flush().map_err(io(&path))?;
        let rec = Arc::new(record);
        let mut idx = self.index.write().unwrap_or_else(|e| e.into_inner());
        let n = idx.records.len();
        idx.by_id.insert(rec.id, n);
        idx.records.push(rec.clone());
        Ok(rec)
    }

    pub fn get(&self, id: &Uuid) -> Option<Arc<CaseRecord>> {
        let idx = self.index.read().unwrap_or_else(|e| e.into_inner());
        idx.by_id.get(id).map(|&i| idx.records[i].clone())
    }

    pub fn len(&self) -> usize {
        self.index.read().unwrap_or_else(|e| e.into_inner()).records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Verified cases as a training manifest pointing at the stored blobs.
    pub fn export_verified(&self) -> DatasetManifest {
        let idx = self.index.read().unwrap_or_else(|e| e.into_inner());
        let entries = idx
            .records
            .iter()
            .filter_map(|r| {
                let label = r.verified_label?;
                let file = Path::new(BLOB_DIR).join(&r.image.sha256);
                Some(ManifestEntry::new(r.id.to_string(), "verified", Some(label), file.to_string_lossy()))
            })
            .collect();
        DatasetManifest::new(entries, &self.root).expect("case ids are unique")
    }
}
