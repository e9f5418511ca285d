pub mod band;
pub mod cluster;
pub mod dedup;
pub mod eval;
pub mod pii;
pub mod scan;
pub mod serve;
pub mod train;

use std::collections::HashSet;
use std::path::Path;

use anyhow::{Context, Result};
use sonoscan_core::dedup::DupReport;
use sonoscan_core::embedding::load_metadata;
use sonoscan_core::{load_embeddings, Dataset, Detection};

use crate::output::{read_json, read_jsonl};

/// Embeddings plus their metadata, or synthetic ids when metadata is absent.
pub fn load_dataset(embeddings: &Path, metadata: Option<&Path>) -> Result<Dataset> {
    let emb = load_embeddings(embeddings)?;
    match metadata {
        Some(m) => {
            let records = load_metadata(m)?;
            Ok(Dataset::new(records, emb).with_context(|| format!("{} vs {}", m.display(), embeddings.display()))?)
        }
        None => Ok(Dataset::anonymous(emb)),
    }
}

pub fn detection_ids(path: &Path) -> Result<Vec<String>> {
    let dets: Vec<Detection> = read_jsonl(path)?;
    let mut seen = HashSet::new();
    Ok(dets
        .into_iter()
        .filter(|d| seen.insert(d.image_id.clone()))
        .map(|d| d.image_id)
        .collect())
}

pub fn load_dedup(path: &Path) -> Result<DupReport> {
    read_json(path)
}

/// Ids to process: the detections (or every record), minus dedup removals, in input order.
pub fn select_ids(all: &[String], detections: Option<&Path>, dedup: Option<&Path>) -> Result<Vec<String>> {
    let base = match detections {
        Some(p) => detection_ids(p)?,
        None => all.to_vec(),
    };
    let removed: HashSet<String> = match dedup {
        Some(p) => load_dedup(p)?.removed.into_iter().collect(),
        None => HashSet::new(),
    };
    Ok(base.into_iter().filter(|id| !removed.contains(id)).collect())
}
