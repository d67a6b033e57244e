use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use textmatch::dataset::{read_corpus, read_relations, Split};
use textmatch::experiment::{Dataset, DatasetFiles};
use textmatch::store::write_atomic;

use super::error::{ApiError, ApiResult};

pub const FIELDS: [&str; 5] = [
    "corpus_left",
    "corpus_right",
    "relations_train",
    "relations_valid",
    "relations_test",
];
const RECORD_FILE: &str = "dataset.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    /// Upload field name → stored file name.
    pub files: BTreeMap<String, String>,
    pub row_counts: BTreeMap<String, usize>,
    pub created_at: DateTime<Utc>,
}

impl DatasetRecord {
    pub fn dataset_files(&self, dir: &Path) -> DatasetFiles {
        let path = |field: &str| self.files.get(field).map(|f| dir.join(f));
        DatasetFiles {
            corpus_left: path("corpus_left").unwrap_or_default(),
            corpus_right: path("corpus_right").unwrap_or_default(),
            relations_train: path("relations_train").unwrap_or_default(),
            relations_valid: path("relations_valid"),
            relations_test: path("relations_test"),
        }
    }
}

/// Uploaded datasets, one directory each.
pub struct DatasetStore {
    root: PathBuf,
    records: Mutex<BTreeMap<String, DatasetRecord>>,
}

impl DatasetStore {
    pub fn open(root: PathBuf) -> std::io::Result<Self> {
        fs::create_dir_all(&root)?;
        let mut records = BTreeMap::new();
        for entry in fs::read_dir(&root)? {
            let path = entry?.path().join(RECORD_FILE);
            let Ok(bytes) = fs::read(&path) else { continue };
            match serde_json::from_slice::<DatasetRecord>(&bytes) {
                Ok(r) => {
                    records.insert(r.id.clone(), r);
                }
                Err(e) => tracing::warn!("skipping {}: {e}", path.display()),
            }
        }
        Ok(DatasetStore {
            root,
            records: Mutex::new(records),
        })
    }

    fn dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    pub fn list(&self) -> Vec<DatasetRecord> {
        let mut v: Vec<_> = self.records.lock().unwrap().values().cloned().collect();
        v.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.id.cmp(&b.id)));
        v
    }

    pub fn get(&self, id: &str) -> ApiResult<DatasetRecord> {
        self.records
            .lock()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("dataset", id))
    }

    pub fn load(&self, id: &str) -> ApiResult<Dataset> {
        let record = self.get(id)?;
        Ok(Dataset::load(&record.dataset_files(&self.dir(id)))?)
    }

    /// Validates uploaded file contents and stores them as a new dataset.
    pub fn create(&self, uploads: BTreeMap<String, Vec<u8>>) -> ApiResult<DatasetRecord> {
        for required in ["corpus_left", "corpus_right", "relations_train"] {
            if !uploads.contains_key(required) {
                return Err(ApiError::invalid(format!("missing upload field `{required}`")));
            }
        }
        let corpus = |f: &str| read_corpus(&uploads[f][..], Path::new(f));
        let left = corpus("corpus_left")?;
        let right = corpus("corpus_right")?;
        let mut splits = BTreeMap::new();
        for (field, split) in [
            ("relations_train", Split::Train),
            ("relations_valid", Split::Valid),
            ("relations_test", Split::Test),
        ] {
            if let Some(bytes) = uploads.get(field) {
                splits.insert(split, read_relations(&bytes[..], Path::new(field))?);
            }
        }
        let dataset = Dataset::new(left, right, splits)?;

        let id = uuid::Uuid::new_v4().simple().to_string();
        let dir = self.dir(&id);
        fs::create_dir_all(&dir)?;
        let mut files = BTreeMap::new();
        for (field, bytes) in &uploads {
            let name = format!("{field}.tsv");
            write_atomic(&dir.join(&name), bytes)?;
            files.insert(field.clone(), name);
        }
        let record = DatasetRecord {
            id: id.clone(),
            files,
            row_counts: dataset.row_counts(),
            created_at: Utc::now(),
        };
        let json = serde_json::to_vec_pretty(&record).map_err(|e| ApiError::internal(e.to_string()))?;
        write_atomic(&dir.join(RECORD_FILE), &json)?;
        self.records.lock().unwrap().insert(id, record.clone());
        Ok(record)
    }
}
