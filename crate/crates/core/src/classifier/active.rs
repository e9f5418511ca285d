//! Training-set refinement: leakage removal, hard-example mining, seed
//! expansion and inspection of the band just below the decision boundary.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{label_of, ClassifierError, LabeledSet, Model};
use crate::embedding::{dot, sort_hits, EmbeddingError, EmbeddingMatrix, ScanHit};

fn unit(m: &EmbeddingMatrix) -> Result<std::borrow::Cow<'_, EmbeddingMatrix>, EmbeddingError> {
    if m.is_normalized() {
        Ok(std::borrow::Cow::Borrowed(m))
    } else {
        Ok(std::borrow::Cow::Owned(m.clone().normalize()?))
    }
}

fn max_similarity(row: &[f32], others: &EmbeddingMatrix) -> f64 {
    others
        .rows()
        .map(|o| dot(row, o))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Drops every pool item whose cosine similarity to some holdout row exceeds `theta`.
/// Returns the kept pool and the removed ids in pool order.
pub fn leakage_filter(
    pool: &LabeledSet,
    holdout: &EmbeddingMatrix,
    theta: f64,
) -> Result<(LabeledSet, Vec<String>), ClassifierError> {
    if holdout.dim() != pool.dim() {
        return Err(ClassifierError::DimMismatch {
            expected: pool.dim(),
            actual: holdout.dim(),
        });
    }
    let p = unit(&pool.x)?;
    let h = unit(holdout)?;
    let mut keep = Vec::with_capacity(pool.len());
    let mut removed = Vec::new();
    for (i, row) in p.rows().enumerate() {
        if max_similarity(row, &h) > theta {
            removed.push(pool.ids[i].clone());
        } else {
            keep.push(i);
        }
    }
    Ok((pool.select(&keep), removed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardExample {
    pub id: String,
    pub row: usize,
    pub score: f64,
    pub label: u8,
}

/// Misclassified validation items, least confident first.
pub fn mine_hard_examples(
    model: &Model,
    val: &LabeledSet,
) -> Result<Vec<HardExample>, ClassifierError> {
    let scores = model.scores(&val.x)?;
    let mut out: Vec<HardExample> = scores
        .iter()
        .enumerate()
        .filter(|(i, &s)| label_of(s) != val.y[*i])
        .map(|(i, &s)| HardExample {
            id: val.ids[i].clone(),
            row: i,
            score: s,
            label: val.y[i],
        })
        .collect();
    out.sort_by(|a, b| {
        a.score
            .abs()
            .total_cmp(&b.score.abs())
            .then(a.row.cmp(&b.row))
    });
    Ok(out)
}

/// The `k` pool rows most similar to any seed, skipping `exclude`.
/// Ordered by similarity descending, then row.
pub fn expand_from_seeds(
    pool: &EmbeddingMatrix,
    seeds: &EmbeddingMatrix,
    k: usize,
    exclude: &HashSet<usize>,
) -> Result<Vec<ScanHit>, ClassifierError> {
    if k == 0 || seeds.count() == 0 {
        return Ok(Vec::new());
    }
    if seeds.dim() != pool.dim() {
        return Err(ClassifierError::DimMismatch {
            expected: pool.dim(),
            actual: seeds.dim(),
        });
    }
    let p = unit(pool)?;
    let s = unit(seeds)?;
    let mut hits: Vec<ScanHit> = p
        .rows()
        .enumerate()
        .filter(|(i, _)| !exclude.contains(i))
        .map(|(row, r)| ScanHit {
            row,
            similarity: max_similarity(r, &s),
        })
        .collect();
    sort_hits(&mut hits);
    hits.truncate(k);
    Ok(hits)
}

/// Rows with `-k_sd * sd <= score < 0`, where `sd` is the population standard
/// deviation of all negative scores. Sorted by score descending.
pub fn boundary_band(
    model: &Model,
    x: &EmbeddingMatrix,
    k_sd: f64,
) -> Result<Vec<ScanHit>, ClassifierError> {
    let scores = model.scores(x)?;
    band_from_scores(&scores, k_sd)
}

pub(crate) fn band_from_scores(scores: &[f64], k_sd: f64) -> Result<Vec<ScanHit>, ClassifierError> {
    let neg: Vec<f64> = scores.iter().copied().filter(|&s| s < 0.0).collect();
    if neg.is_empty() {
        return Err(ClassifierError::NoNegativePredictions);
    }
    let n = neg.len() as f64;
    let mean = neg.iter().sum::<f64>() / n;
    let sd = (neg.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt();
    let lo = -k_sd * sd;
    let mut hits: Vec<ScanHit> = scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s < 0.0 && s >= lo)
        .map(|(row, &s)| ScanHit { row, similarity: s })
        .collect();
    sort_hits(&mut hits);
    Ok(hits)
}
