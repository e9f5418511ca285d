//! Retrieval-based detection: an image is flagged when its best cosine
//! similarity to any query reaches `tau`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{dot, Dataset, EmbeddingError, EmbeddingMatrix, QueryKind, QuerySet};

/// Default thresholds tuned on the original validation split.
pub const DEFAULT_IMAGE_TAU: f64 = 0.7;
pub const DEFAULT_TEXT_TAU: f64 = 0.3;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("tau {0} outside [0, 1]")]
    TauOutOfRange(f64),
    #[error("query set is empty")]
    EmptyQueries,
    #[error("threshold grid is empty")]
    EmptyGrid,
    #[error("{labels} labels for {rows} rows")]
    LabelCount { labels: usize, rows: usize },
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub tau: f64,
    pub query_kind: QueryKind,
}

impl RetrievalConfig {
    pub fn new(tau: f64, query_kind: QueryKind) -> Result<Self, RetrievalError> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(RetrievalError::TauOutOfRange(tau));
        }
        Ok(Self { tau, query_kind })
    }

    pub fn default_for(query_kind: QueryKind) -> Self {
        let tau = match query_kind {
            QueryKind::Image => DEFAULT_IMAGE_TAU,
            QueryKind::Text => DEFAULT_TEXT_TAU,
        };
        Self { tau, query_kind }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectionSource {
    Retrieval,
    Classifier,
}

/// A flagged image. Review labels are attached later by the review service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    pub score: f64,
    pub source: DetectionSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_query: Option<String>,
}

/// Best query similarity and its index for every row of `m`.
/// Ties keep the lowest query index.
pub fn max_query_similarity(
    m: &EmbeddingMatrix,
    queries: &QuerySet,
) -> Result<Vec<(f64, usize)>, RetrievalError> {
    if queries.is_empty() {
        return Err(RetrievalError::EmptyQueries);
    }
    let q = &queries.embeddings;
    if q.dim() != m.dim() {
        return Err(EmbeddingError::DimMismatch {
            expected: m.dim(),
            actual: q.dim(),
        }
        .into());
    }
    if !m.is_normalized() {
        return Err(EmbeddingError::NotNormalized.into());
    }
    Ok(m.rows()
        .map(|row| {
            let mut best = (f64::NEG_INFINITY, 0);
            for (qi, qrow) in q.rows().enumerate() {
                let s = dot(row, qrow);
                if s > best.0 {
                    best = (s, qi);
                }
            }
            best
        })
        .collect())
}

/// Detections in dataset row order.
pub fn retrieve(
    dataset: &Dataset,
    queries: &QuerySet,
    cfg: &RetrievalConfig,
) -> Result<Vec<Detection>, RetrievalError> {
    RetrievalConfig::new(cfg.tau, cfg.query_kind)?;
    let best = max_query_similarity(&dataset.embeddings, queries)?;
    Ok(dataset
        .records
        .iter()
        .zip(best)
        .filter(|(_, (s, _))| *s >= cfg.tau)
        .map(|(rec, (s, qi))| Detection {
            image_id: rec.id.clone(),
            score: s,
            source: DetectionSource::Retrieval,
            best_query: Some(queries.labels[qi].clone()),
        })
        .collect())
}

/// Picks the grid value with the best validation accuracy; ties go to the smaller tau.
pub fn tune_tau(
    val: &EmbeddingMatrix,
    val_labels: &[u8],
    queries: &QuerySet,
    grid: &[f64],
) -> Result<f64, RetrievalError> {
    if grid.is_empty() {
        return Err(RetrievalError::EmptyGrid);
    }
    if val_labels.len() != val.count() {
        return Err(RetrievalError::LabelCount {
            labels: val_labels.len(),
            rows: val.count(),
        });
    }
    let scores: Vec<f64> = max_query_similarity(val, queries)?
        .into_iter()
        .map(|(s, _)| s)
        .collect();
    Ok(tune_threshold(&scores, val_labels, grid))
}

/// Threshold from `grid` maximizing accuracy of `score >= t`.
pub fn tune_threshold(scores: &[f64], labels: &[u8], grid: &[f64]) -> f64 {
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut best = (sorted[0], usize::MIN);
    let mut first = true;
    for &t in &sorted {
        let correct = scores
            .iter()
            .zip(labels)
            .filter(|(&s, &y)| (s >= t) == (y == 1))
            .count();
        if first || correct > best.1 {
            best = (t, correct);
            first = false;
        }
    }
    best.0
}
