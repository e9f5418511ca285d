use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sonoscan_core::pii_eval::TruthSpan;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Confirm,
    Reject,
}

/// One durable annotation. `(image_id, annotator, revision)` is unique and
/// revisions per image and annotator strictly increase in log order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_id: String,
    pub annotator: String,
    pub revision: u64,
    pub verdict: Verdict,
    #[serde(default)]
    pub truth_spans: Vec<TruthSpan>,
    /// Milliseconds since the Unix epoch.
    pub timestamp: u64,
}

/// Request body: a record without timestamp. The image id comes from the
/// URL and the annotator may come from a header instead.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRequest {
    #[serde(default)]
    pub image_id: Option<String>,
    #[serde(default)]
    pub annotator: Option<String>,
    pub revision: u64,
    pub verdict: Verdict,
    #[serde(default)]
    pub truth_spans: Vec<TruthSpan>,
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("annotation log {path}, line {line}: {message}")]
    Corrupt {
        path: String,
        line: usize,
        message: String,
    },
    #[error("revision {given} for image {image_id} by {annotator} is not after latest revision {latest}")]
    StaleRevision {
        image_id: String,
        annotator: String,
        given: u64,
        latest: u64,
    },
    #[error("invalid annotation: {0}")]
    Invalid(String),
    #[error("annotation log i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Default, Clone)]
struct LogState {
    records: Vec<AnnotationRecord>,
    latest: HashMap<(String, String), u64>,
}

impl LogState {
    fn check(&self, r: &AnnotationRecord) -> Result<(), LogError> {
        if r.image_id.is_empty() {
            return Err(LogError::Invalid("empty image id".into()));
        }
        if r.annotator.trim().is_empty() {
            return Err(LogError::Invalid("empty annotator".into()));
        }
        if r.revision == 0 {
            return Err(LogError::Invalid("revisions start at 1".into()));
        }
        if let Some(s) = r.truth_spans.iter().find(|s| !s.entity_type.is_audited()) {
            return Err(LogError::Invalid(format!("unsupported entity type {}", s.entity_type)));
        }
        let latest = self
            .latest
            .get(&(r.image_id.clone(), r.annotator.clone()))
            .copied()
            .unwrap_or(0);
        if r.revision <= latest {
            return Err(LogError::StaleRevision {
                image_id: r.image_id.clone(),
                annotator: r.annotator.clone(),
                given: r.revision,
                latest,
            });
        }
        Ok(())
    }

    fn apply(&mut self, r: AnnotationRecord) {
        self.latest
            .insert((r.image_id.clone(), r.annotator.clone()), r.revision);
        self.records.push(r);
    }
}

/// Append-only annotation log with a single serialized writer.
#[derive(Debug)]
pub struct AnnotationLog {
    path: PathBuf,
    writer: Mutex<File>,
    state: RwLock<LogState>,
}

impl AnnotationLog {
    /// Opens or creates the log and replays it. Any unparsable or
    /// inconsistent line is an error naming that line.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, LogError> {
        let path = path.as_ref().to_path_buf();
        let mut state = LogState::default();
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for (i, line) in reader.lines().enumerate() {
                let corrupt = |message: String| LogError::Corrupt {
                    path: path.display().to_string(),
                    line: i + 1,
                    message,
                };
                let line = line.map_err(|e| corrupt(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: AnnotationRecord =
                    serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
                state.check(&rec).map_err(|e| corrupt(e.to_string()))?;
                state.apply(rec);
            }
        }
        let writer = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            path,
            writer: Mutex::new(writer),
            state: RwLock::new(state),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Validates, appends and syncs one record. The record is visible to
    /// readers only after the sync succeeded.
    pub fn append(&self, mut rec: AnnotationRecord) -> Result<AnnotationRecord, LogError> {
        let mut file = self.writer.lock().expect("log writer poisoned");
        self.state.read().expect("log state poisoned").check(&rec)?;
        if rec.timestamp == 0 {
            rec.timestamp = now_millis();
        }
        let mut line = serde_json::to_vec(&rec).map_err(|e| LogError::Invalid(e.to_string()))?;
        line.push(b'\n');
        file.write_all(&line)?;
        file.sync_data()?;
        self.state.write().expect("log state poisoned").apply(rec.clone());
        Ok(rec)
    }

    /// All records in append order.
    pub fn records(&self) -> Vec<AnnotationRecord> {
        self.state.read().expect("log state poisoned").records.clone()
    }

    pub fn records_for(&self, image_id: &str) -> Vec<AnnotationRecord> {
        self.state
            .read()
            .expect("log state poisoned")
            .records
            .iter()
            .filter(|r| r.image_id == image_id)
            .cloned()
            .collect()
    }

    pub fn latest_revision(&self, image_id: &str, annotator: &str) -> u64 {
        self.state
            .read()
            .expect("log state poisoned")
            .latest
            .get(&(image_id.to_string(), annotator.to_string()))
            .copied()
            .unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.state.read().expect("log state poisoned").records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(1)
        .max(1)
}
