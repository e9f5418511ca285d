use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{accuracy_of, ClassifierError, LabeledSet};

/// Linear decision function `w . x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSvmModel {
    pub w: Vec<f64>,
    pub b: f64,
    pub lambda: f64,
}

impl LinearSvmModel {
    pub fn score(&self, x: &[f32]) -> f64 {
        self.w
            .iter()
            .zip(x)
            .map(|(&w, &v)| w * f64::from(v))
            .sum::<f64>()
            + self.b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    pub lambda_grid: Vec<f64>,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            lambda_grid: vec![1e-4, 1e-3, 1e-2, 1e-1],
            epochs: 20,
            seed: 0,
        }
    }
}

/// Pegasos on the L2-regularized hinge loss. The bias is an extra constant
/// feature and is regularized with the weights. The returned weights are the
/// average of the iterates visited during the final epoch.
fn pegasos(train: &LabeledSet, lambda: f64, epochs: usize, seed: u64) -> LinearSvmModel {
    let d = train.dim();
    let n = train.len();
    let mut w = vec![0.0f64; d + 1];
    let mut avg = vec![0.0f64; d + 1];
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radius = 1.0 / lambda.sqrt();
    let mut t = 0u64;
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let last = epoch + 1 == epochs;
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let x = train.x.row(i);
            let y = if train.y[i] == 1 { 1.0 } else { -1.0 };
            let margin = y * (x.iter().zip(&w).map(|(&v, &wj)| f64::from(v) * wj).sum::<f64>() + w[d]);
            let shrink = 1.0 - eta * lambda;
            w.iter_mut().for_each(|wj| *wj *= shrink);
            if margin < 1.0 {
                for (wj, &v) in w.iter_mut().zip(x) {
                    *wj += eta * y * f64::from(v);
                }
                w[d] += eta * y;
            }
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > radius {
                let s = radius / norm;
                w.iter_mut().for_each(|wj| *wj *= s);
            }
            if last {
                avg.iter_mut().zip(&w).for_each(|(a, &wj)| *a += wj);
            }
        }
    }
    if n > 0 && epochs > 0 {
        avg.iter_mut().for_each(|a| *a /= n as f64);
    }
    let b = avg.pop().unwrap_or(0.0);
    LinearSvmModel { w: avg, b, lambda }
}

/// Grid search over `lambda_grid`; best validation accuracy wins, ties go to the smaller lambda.
pub fn train_svm(
    train: &LabeledSet,
    val: &LabeledSet,
    cfg: &SvmConfig,
) -> Result<LinearSvmModel, ClassifierError> {
    train.check_trainable()?;
    if cfg.lambda_grid.is_empty() {
        return Err(ClassifierError::EmptyGrid);
    }
    if cfg.lambda_grid.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
        return Err(ClassifierError::Config("lambda must be positive".into()));
    }
    if val.dim() != train.dim() {
        return Err(ClassifierError::DimMismatch {
            expected: train.dim(),
            actual: val.dim(),
        });
    }
    let mut grid = cfg.lambda_grid.clone();
    grid.sort_by(f64::total_cmp);
    let mut best: Option<(f64, LinearSvmModel)> = None;
    for lambda in grid {
        let model = pegasos(train, lambda, cfg.epochs.max(1), cfg.seed);
        let scores: Vec<f64> = val.x.rows().map(|r| model.score(r)).collect();
        let acc = accuracy_of(&scores, &val.y);
        log::debug!("svm lambda={lambda} val_acc={acc:.4}");
        if best.as_ref().is_none_or(|(a, _)| acc > *a) {
            best = Some((acc, model));
        }
    }
    Ok(best.expect("grid non-empty").1)
}
