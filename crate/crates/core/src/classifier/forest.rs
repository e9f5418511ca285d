use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{accuracy_of, ClassifierError, LabeledSet};

/// Node of a tree stored in preorder; a split's left child is the next node.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        right: usize,
    },
    Leaf {
        counts: [u32; 2],
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
}

impl DecisionTree {
    /// Class predicted by the reached leaf. Equal counts go to the positive class.
    pub fn predict(&self, x: &[f32]) -> u8 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Split {
                    feature,
                    threshold,
                    right,
                } => {
                    i = if f64::from(x[*feature]) <= *threshold {
                        i + 1
                    } else {
                        *right
                    };
                }
                TreeNode::Leaf { counts } => return u8::from(counts[1] >= counts[0]),
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> (usize, usize) {
            // returns (depth, index after subtree)
            match &nodes[i] {
                TreeNode::Leaf { .. } => (0, i + 1),
                TreeNode::Split { right, .. } => {
                    let (l, _) = walk(nodes, i + 1);
                    let (r, end) = walk(nodes, *right);
                    (1 + l.max(r), end)
                }
            }
        }
        walk(&self.nodes, 0).0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomForestModel {
    pub trees: Vec<DecisionTree>,
    pub dim: usize,
    pub seed: u64,
}

impl RandomForestModel {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn vote_fraction(&self, x: &[f32]) -> f64 {
        let pos = self.trees.iter().filter(|t| t.predict(x) == 1).count();
        pos as f64 / self.trees.len().max(1) as f64
    }

    /// Positive-vote fraction minus one half.
    pub fn score(&self, x: &[f32]) -> f64 {
        self.vote_fraction(x) - 0.5
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    /// Features tried per split; `None` means `round(sqrt(dim))`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RfGrid {
    pub n_trees: Vec<usize>,
    pub max_depth: Vec<usize>,
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for RfGrid {
    fn default() -> Self {
        Self {
            n_trees: vec![50, 100],
            max_depth: vec![8, 16],
            max_features: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

struct Builder<'a> {
    data: &'a LabeledSet,
    max_depth: usize,
    max_features: usize,
    nodes: Vec<TreeNode>,
}

fn gini(c: [u32; 2]) -> f64 {
    let n = f64::from(c[0] + c[1]);
    if n == 0.0 {
        return 0.0;
    }
    let p = f64::from(c[1]) / n;
    2.0 * p * (1.0 - p)
}

impl Builder<'_> {
    fn counts(&self, rows: &[usize]) -> [u32; 2] {
        let mut c = [0u32; 2];
        for &r in rows {
            c[usize::from(self.data.y[r])] += 1;
        }
        c
    }

    /// Best (feature, threshold, weighted child impurity) among sampled features.
    fn best_split(&self, rows: &[usize], rng: &mut ChaCha8Rng) -> Option<(usize, f64, f64)> {
        let dim = self.data.dim();
        let total = self.counts(rows);
        let n = rows.len() as f64;
        let mut best: Option<(usize, f64, f64)> = None;
        let mut features: Vec<usize> = sample(rng, dim, self.max_features.min(dim)).into_vec();
        features.sort_unstable();
        let mut vals: Vec<(f32, u8)> = Vec::with_capacity(rows.len());
        for f in features {
            vals.clear();
            vals.extend(rows.iter().map(|&r| (self.data.x.row(r)[f], self.data.y[r])));
            vals.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left = [0u32; 2];
            for k in 0..vals.len() - 1 {
                left[usize::from(vals[k].1)] += 1;
                if vals[k].0 == vals[k + 1].0 {
                    continue;
                }
                let right = [total[0] - left[0], total[1] - left[1]];
                let nl = f64::from(left[0] + left[1]);
                let imp = (nl * gini(left) + (n - nl) * gini(right)) / n;
                if best.is_none_or(|(_, _, b)| imp < b) {
                    let thr = (f64::from(vals[k].0) + f64::from(vals[k + 1].0)) / 2.0;
                    best = Some((f, thr, imp));
                }
            }
        }
        best
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) {
        let counts = self.counts(&rows);
        let pure = counts[0] == 0 || counts[1] == 0;
        if pure || depth >= self.max_depth || rows.len() < 2 {
            self.nodes.push(TreeNode::Leaf { counts });
            return;
        }
        let Some((feature, threshold, _)) = self.best_split(&rows, rng) else {
            self.nodes.push(TreeNode::Leaf { counts });
            return;
        };
        let (left, right): (Vec<usize>, Vec<usize>) = rows
            .into_iter()
            .partition(|&r| f64::from(self.data.x.row(r)[feature]) <= threshold);
        let at = self.nodes.len();
        self.nodes.push(TreeNode::Split {
            feature,
            threshold,
            right: 0,
        });
        self.grow(left, depth + 1, rng);
        let right_at = self.nodes.len();
        if let TreeNode::Split { right, .. } = &mut self.nodes[at] {
            *right = right_at;
        }
        self.grow(right, depth + 1, rng);
    }
}

fn fit_forest(train: &LabeledSet, p: &ForestParams, seed: u64) -> RandomForestModel {
    let dim = train.dim();
    let max_features = p
        .max_features
        .unwrap_or_else(|| ((dim as f64).sqrt().round() as usize).max(1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = train.len();
    let trees = (0..p.n_trees.max(1))
        .map(|_| {
            let rows: Vec<usize> = if p.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let mut b = Builder {
                data: train,
                max_depth: p.max_depth,
                max_features,
                nodes: Vec::new(),
            };
            b.grow(rows, 0, &mut rng);
            DecisionTree { nodes: b.nodes }
        })
        .collect();
    RandomForestModel { trees, dim, seed }
}

/// Grid search over tree count and depth by validation accuracy; ties keep the earlier (smaller) setting.
pub fn train_rf(
    train: &LabeledSet,
    val: &LabeledSet,
    grid: &RfGrid,
) -> Result<RandomForestModel, ClassifierError> {
    train.check_trainable()?;
    if grid.n_trees.is_empty() || grid.max_depth.is_empty() {
        return Err(ClassifierError::EmptyGrid);
    }
    if val.dim() != train.dim() {
        return Err(ClassifierError::DimMismatch {
            expected: train.dim(),
            actual: val.dim(),
        });
    }
    let mut n_trees = grid.n_trees.clone();
    n_trees.sort_unstable();
    let mut depths = grid.max_depth.clone();
    depths.sort_unstable();
    let mut best: Option<(f64, RandomForestModel)> = None;
    for &nt in &n_trees {
        for &md in &depths {
            let params = ForestParams {
                n_trees: nt,
                max_depth: md,
                max_features: grid.max_features,
                bootstrap: grid.bootstrap,
            };
            let model = fit_forest(train, &params, grid.seed);
            let scores: Vec<f64> = val.x.rows().map(|r| model.score(r)).collect();
            let acc = accuracy_of(&scores, &val.y);
            log::debug!("rf n_trees={nt} max_depth={md} val_acc={acc:.4}");
            if best.as_ref().is_none_or(|(a, _)| acc > *a) {
                best = Some((acc, model));
            }
        }
    }
    Ok(best.expect("grid non-empty").1)
}
