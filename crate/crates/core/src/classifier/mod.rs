//! Supervised detection heads over embedding features: linear SVM, random
//! forest and a small MLP, plus the active-learning utilities that refine
//! their training sets.

mod active;
mod forest;
mod metrics;
mod mlp;
mod model_io;
mod svm;

pub use active::{boundary_band, expand_from_seeds, leakage_filter, mine_hard_examples, HardExample};
pub use forest::{train_rf, DecisionTree, ForestParams, RandomForestModel, RfGrid, TreeNode};
pub use metrics::{evaluate, EvalReport};
pub use mlp::{adam_step, train_mlp, AdamState, DenseLayer, MlpConfig, MlpModel};
pub use model_io::{load_model, read_model, save_model, write_model, MODEL_MAGIC};
pub use svm::{train_svm, LinearSvmModel, SvmConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{Dataset, EmbeddingError, EmbeddingMatrix};
use crate::retrieval::{Detection, DetectionSource};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("training set must contain both classes")]
    SingleClass,
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("{labels} labels for {rows} rows")]
    LabelCount { labels: usize, rows: usize },
    #[error("{ids} ids for {rows} rows")]
    IdCount { ids: usize, rows: usize },
    #[error("label {0} is not 0 or 1")]
    BadLabel(u8),
    #[error("feature dimension mismatch: model expects {expected}, input has {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("hyperparameter grid is empty")]
    EmptyGrid,
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("prediction and truth lengths differ ({pred} vs {truth})")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("no actual negatives: false-positive rate undefined")]
    NoNegatives,
    #[error("no actual positives: false-negative rate undefined")]
    NoPositives,
    #[error("no negative predictions to form a boundary band")]
    NoNegativePredictions,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Features with binary labels (1 = target category) and stable ids.
#[derive(Debug, Clone)]
pub struct LabeledSet {
    pub x: EmbeddingMatrix,
    pub y: Vec<u8>,
    pub ids: Vec<String>,
    pub split: Split,
}

impl LabeledSet {
    pub fn new(
        x: EmbeddingMatrix,
        y: Vec<u8>,
        ids: Vec<String>,
        split: Split,
    ) -> Result<Self, ClassifierError> {
        if y.len() != x.count() {
            return Err(ClassifierError::LabelCount {
                labels: y.len(),
                rows: x.count(),
            });
        }
        if ids.len() != x.count() {
            return Err(ClassifierError::IdCount {
                ids: ids.len(),
                rows: x.count(),
            });
        }
        if let Some(&bad) = y.iter().find(|&&l| l > 1) {
            return Err(ClassifierError::BadLabel(bad));
        }
        Ok(Self { x, y, ids, split })
    }

    /// Ids `"{prefix}{row}"`.
    pub fn with_index_ids(
        x: EmbeddingMatrix,
        y: Vec<u8>,
        prefix: &str,
        split: Split,
    ) -> Result<Self, ClassifierError> {
        let ids = (0..x.count()).map(|i| format!("{prefix}{i}")).collect();
        Self::new(x, y, ids, split)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.dim()
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            x: self.x.select(rows),
            y: rows.iter().map(|&r| self.y[r]).collect(),
            ids: rows.iter().map(|&r| self.ids[r].clone()).collect(),
            split: self.split,
        }
    }

    /// Errors unless the set is non-empty and holds both labels.
    pub(crate) fn check_trainable(&self) -> Result<(), ClassifierError> {
        if self.is_empty() {
            return Err(ClassifierError::EmptyTrainingSet);
        }
        let pos = self.y.iter().filter(|&&l| l == 1).count();
        if pos == 0 || pos == self.len() {
            return Err(ClassifierError::SingleClass);
        }
        Ok(())
    }
}

/// Fraction of rows where `score >= 0` agrees with the label.
pub(crate) fn accuracy_of(scores: &[f64], y: &[u8]) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    let correct = scores
        .iter()
        .zip(y)
        .filter(|(&s, &l)| label_of(s) == l)
        .count();
    correct as f64 / y.len() as f64
}

#[inline]
pub fn label_of(score: f64) -> u8 {
    u8::from(score >= 0.0)
}

/// Any trained detection head.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Svm(LinearSvmModel),
    Forest(RandomForestModel),
    Mlp(MlpModel),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Svm,
    Rf,
    Mlp,
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Svm(_) => ModelKind::Svm,
            Model::Forest(_) => ModelKind::Rf,
            Model::Mlp(_) => ModelKind::Mlp,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Model::Svm(m) => m.w.len(),
            Model::Forest(m) => m.dim,
            Model::Mlp(m) => m.input_dim(),
        }
    }

    pub fn score_row(&self, x: &[f32]) -> f64 {
        match self {
            Model::Svm(m) => m.score(x),
            Model::Forest(m) => m.score(x),
            Model::Mlp(m) => m.logit(x),
        }
    }

    /// Decision scores; positive side is `score >= 0`.
    pub fn scores(&self, x: &EmbeddingMatrix) -> Result<Vec<f64>, ClassifierError> {
        if x.dim() != self.dim() {
            return Err(ClassifierError::DimMismatch {
                expected: self.dim(),
                actual: x.dim(),
            });
        }
        Ok(match self {
            Model::Mlp(m) => m.logits(x),
            _ => x.rows().map(|r| self.score_row(r)).collect(),
        })
    }
}

/// Scores and 0/1 labels for every row of `x`.
pub fn predict(model: &Model, x: &EmbeddingMatrix) -> Result<(Vec<f64>, Vec<u8>), ClassifierError> {
    let scores = model.scores(x)?;
    let labels = scores.iter().map(|&s| label_of(s)).collect();
    Ok((scores, labels))
}

/// Classifier-based detections in dataset row order.
pub fn detect(model: &Model, dataset: &Dataset) -> Result<Vec<Detection>, ClassifierError> {
    let scores = model.scores(&dataset.embeddings)?;
    Ok(dataset
        .records
        .iter()
        .zip(scores)
        .filter(|(_, s)| label_of(*s) == 1)
        .map(|(r, s)| Detection {
            image_id: r.id.clone(),
            score: s,
            source: DetectionSource::Classifier,
            best_query: None,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labeled_set_validation() {
        let x = EmbeddingMatrix::new(2, 1, vec![0.0, 1.0]).unwrap();
        assert!(matches!(
            LabeledSet::with_index_ids(x.clone(), vec![0], "a", Split::Train),
            Err(ClassifierError::LabelCount { .. })
        ));
        assert!(matches!(
            LabeledSet::with_index_ids(x.clone(), vec![0, 2], "a", Split::Train),
            Err(ClassifierError::BadLabel(2))
        ));
        let s = LabeledSet::with_index_ids(x, vec![1, 1], "a", Split::Train).unwrap();
        assert!(matches!(s.check_trainable(), Err(ClassifierError::SingleClass)));
    }

    #[test]
    fn svm_with_zero_weights_labels_everything_positive() {
        let m = Model::Svm(LinearSvmModel {
            w: vec![0.0; 3],
            b: 1.0,
            lambda: 0.1,
        });
        let x = EmbeddingMatrix::new(2, 3, vec![1.0, -2.0, 3.0, -4.0, 5.0, -6.0]).unwrap();
        let (s, l) = predict(&m, &x).unwrap();
        assert_eq!(s, vec![1.0, 1.0]);
        assert_eq!(l, vec![1, 1]);
        let bad = EmbeddingMatrix::new(1, 2, vec![0.0, 0.0]).unwrap();
        assert!(matches!(predict(&m, &bad), Err(ClassifierError::DimMismatch { .. })));
    }

    #[test]
    fn zero_mlp_scores_zero_and_is_positive() {
        let mut m = MlpModel::init(&[4, 3, 2, 1], 7);
        for layer in &mut m.layers {
            layer.w.iter_mut().for_each(|v| *v = 0.0);
            layer.b.iter_mut().for_each(|v| *v = 0.0);
        }
        let x = EmbeddingMatrix::new(1, 4, vec![0.3, -1.0, 2.0, 5.0]).unwrap();
        let (s, l) = predict(&Model::Mlp(m), &x).unwrap();
        assert_eq!(s, vec![0.0]);
        assert_eq!(l, vec![1]);
    }
}
