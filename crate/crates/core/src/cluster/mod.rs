//! Structure of a detection set: linear reduction, density clustering, a
//! 2-D layout for display, and per-cluster caption themes.

mod hdbscan;
mod pca;
mod themes;
mod tsne;

pub use hdbscan::{hdbscan, hdbscan_with, ClusterAssignment, CondensedEdge, HdbscanParams, ROOT_OUTLIER_SCORE};
pub use pca::{pca_reduce, PcaResult};
pub use themes::{default_stopwords, theme_words, tokenize_caption, ThemeSummary, WordCount};
pub(crate) use themes::parse_word_list;
pub use tsne::{tsne_2d, TsneConfig, TsneResult};

use thiserror::Error;

use crate::embedding::EmbeddingMatrix;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("need d < count and d <= dim (d={d}, count={count}, dim={dim})")]
    BadTargetDim { d: usize, count: usize, dim: usize },
    #[error("min_cluster_size must be at least 2 (got {0})")]
    MinClusterSize(usize),
    #[error("min_samples must be at least 1")]
    MinSamples,
    #[error("no points")]
    Empty,
    #[error("perplexity {perplexity} infeasible for {count} points (needs perplexity < (count-1)/3)")]
    Perplexity { perplexity: f64, count: usize },
    #[error("{0}")]
    Config(String),
}

/// Dense row-major `f64` point set.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, data: Vec<f64>) -> Self {
        assert!(dim > 0 && data.len() % dim == 0, "data length must be a multiple of dim");
        Self { dim, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let dim = rows.first().map_or(1, Vec::len);
        Self::new(dim, rows.iter().flatten().copied().collect())
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self::new(self.dim, rows.iter().flat_map(|&r| self.row(r).iter().copied()).collect())
    }
}

impl From<&EmbeddingMatrix> for Points {
    fn from(m: &EmbeddingMatrix) -> Self {
        Self::new(m.dim(), m.as_slice().iter().map(|&v| f64::from(v)).collect())
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
