//! Duplicate removal: images whose similarity exceeds `theta` are linked,
//! connected components of the resulting graph are duplicate sets, and one
//! representative (the lexicographically smallest id) is kept per set.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{dot, EmbeddingError, EmbeddingMatrix};

pub const DEFAULT_DEDUP_THETA: f64 = 0.92;

#[derive(Debug, Error)]
pub enum DedupError {
    #[error("{ids} ids but {rows} embedding rows")]
    RowCount { ids: usize, rows: usize },
    #[error("duplicate id {0:?} in input")]
    DuplicateId(String),
    #[error("id {0:?} has no embedding row")]
    MissingRow(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false when `a` and `b` were already joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DupReport {
    /// Each component sorted ascending; components ordered by representative.
    pub components: Vec<Vec<String>>,
    pub kept: Vec<String>,
    pub removed: Vec<String>,
    pub theta: f64,
}

impl DupReport {
    /// Map from every input id to the representative of its component.
    pub fn representative_of(&self) -> BTreeMap<&str, &str> {
        let mut out = BTreeMap::new();
        for comp in &self.components {
            for id in comp {
                out.insert(id.as_str(), comp[0].as_str());
            }
        }
        out
    }
}

fn unit(m: &EmbeddingMatrix) -> Result<std::borrow::Cow<'_, EmbeddingMatrix>, EmbeddingError> {
    if m.is_normalized() {
        Ok(std::borrow::Cow::Borrowed(m))
    } else {
        Ok(std::borrow::Cow::Owned(m.clone().normalize()?))
    }
}

fn check(ids: &[String], matrix: &EmbeddingMatrix) -> Result<(), DedupError> {
    if ids.len() != matrix.count() {
        return Err(DedupError::RowCount {
            ids: ids.len(),
            rows: matrix.count(),
        });
    }
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(DedupError::DuplicateId(id.clone()));
        }
    }
    Ok(())
}

/// Every pair `(i, j)`, `i < j`, with cosine similarity strictly above `theta`.
pub fn pair_similarities(
    ids: &[String],
    matrix: &EmbeddingMatrix,
    theta: f64,
) -> Result<Vec<(usize, usize, f64)>, DedupError> {
    check(ids, matrix)?;
    let m = unit(matrix)?;
    let mut out = Vec::new();
    for i in 0..m.count() {
        let a = m.row(i);
        for j in i + 1..m.count() {
            let s = dot(a, m.row(j));
            if s > theta {
                out.push((i, j, s));
            }
        }
    }
    Ok(out)
}

/// `ids[i]` is the image at row `i` of `matrix`.
pub fn deduplicate(
    ids: &[String],
    matrix: &EmbeddingMatrix,
    theta: f64,
) -> Result<DupReport, DedupError> {
    let pairs = pair_similarities(ids, matrix, theta)?;
    let mut uf = UnionFind::new(ids.len());
    for (i, j, _) in pairs {
        uf.union(i, j);
    }
    let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for i in 0..ids.len() {
        let root = uf.find(i);
        groups.entry(root).or_default().push(ids[i].clone());
    }
    let mut components: Vec<Vec<String>> = groups
        .into_values()
        .map(|mut c| {
            c.sort();
            c
        })
        .collect();
    components.sort();
    let kept = components.iter().map(|c| c[0].clone()).collect();
    let mut removed: Vec<String> = components
        .iter()
        .flat_map(|c| c[1..].iter().cloned())
        .collect();
    removed.sort();
    Ok(DupReport {
        components,
        kept,
        removed,
        theta,
    })
}

/// Rows of `all_ids` for each requested id, in request order.
pub fn rows_for(all_ids: &[String], wanted: &[String]) -> Result<Vec<usize>, DedupError> {
    let index: std::collections::HashMap<&str, usize> = all_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    wanted
        .iter()
        .map(|id| {
            index
                .get(id.as_str())
                .copied()
                .ok_or_else(|| DedupError::MissingRow(id.clone()))
        })
        .collect()
}
