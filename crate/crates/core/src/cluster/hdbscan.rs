//! HDBSCAN over Euclidean points.
//!
//! Core distances, mutual reachability, Prim's MST on the dense graph,
//! single-linkage hierarchy, condensation by `min_cluster_size`, and
//! excess-of-mass selection. Points outside every selected cluster are
//! noise (`-1`).
//!
//! When condensation leaves the root as the only cluster (a single dense
//! group plus scattered outliers), the root itself is selected and points
//! whose GLOSH outlier score exceeds [`ROOT_OUTLIER_SCORE`] are marked as
//! noise.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::{sq_dist, ClusterError, Points};
use crate::dedup::UnionFind;

/// GLOSH cutoff used only when the root is the selected cluster.
pub const ROOT_OUTLIER_SCORE: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HdbscanParams {
    pub min_cluster_size: usize,
    /// Neighbour count for core distances, the point itself included.
    /// `None` means `min_cluster_size`.
    pub min_samples: Option<usize>,
}

impl Default for HdbscanParams {
    fn default() -> Self {
        Self {
            min_cluster_size: 20,
            min_samples: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<i32>,
    pub n_clusters: usize,
    pub min_cluster_size: usize,
}

impl ClusterAssignment {
    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l < 0).count()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_clusters];
        for &l in &self.labels {
            if l >= 0 {
                sizes[l as usize] += 1;
            }
        }
        sizes
    }
}

/// Row of the condensed tree. Children below `n` are points, the rest clusters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CondensedEdge {
    pub parent: usize,
    pub child: usize,
    pub lambda: f64,
    pub size: usize,
}

fn core_distances(points: &Points, k: usize) -> Vec<f64> {
    let n = points.len();
    let mut buf = Vec::with_capacity(n);
    (0..n)
        .map(|i| {
            buf.clear();
            buf.extend((0..n).filter(|&j| j != i).map(|j| sq_dist(points.row(i), points.row(j))));
            if buf.is_empty() || k <= 1 {
                return 0.0;
            }
            // k counts the point itself
            let idx = (k.saturating_sub(1)).clamp(1, buf.len()) - 1;
            let (_, kth, _) = buf.select_nth_unstable_by(idx, f64::total_cmp);
            kth.sqrt()
        })
        .collect()
}

/// Prim's algorithm on the complete mutual-reachability graph.
fn mst(points: &Points, core: &[f64]) -> Vec<(usize, usize, f64)> {
    let n = points.len();
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut from = vec![0usize; n];
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    let mut current = 0;
    in_tree[0] = true;
    for _ in 1..n {
        let mut next = usize::MAX;
        let mut next_d = f64::INFINITY;
        for j in 0..n {
            if in_tree[j] {
                continue;
            }
            let d = sq_dist(points.row(current), points.row(j))
                .sqrt()
                .max(core[current])
                .max(core[j]);
            if d < best[j] {
                best[j] = d;
                from[j] = current;
            }
            if best[j] < next_d || next == usize::MAX {
                next_d = best[j];
                next = j;
            }
        }
        in_tree[next] = true;
        edges.push((from[next], next, next_d));
        current = next;
    }
    edges
}

struct Linkage {
    /// For merge node `n + i`: (left, right, distance, size).
    merges: Vec<(usize, usize, f64, usize)>,
    n: usize,
}

impl Linkage {
    fn build(n: usize, mut edges: Vec<(usize, usize, f64)>) -> Self {
        edges.sort_by(|a, b| {
            a.2.total_cmp(&b.2)
                .then(a.0.min(a.1).cmp(&b.0.min(b.1)))
                .then(a.0.max(a.1).cmp(&b.0.max(b.1)))
        });
        let mut uf = UnionFind::new(2 * n);
        let mut node_of = (0..n).collect::<Vec<usize>>();
        node_of.resize(2 * n, 0);
        let mut sizes = vec![1usize; 2 * n];
        let mut merges = Vec::with_capacity(n.saturating_sub(1));
        for (a, b, d) in edges {
            let (ra, rb) = (uf.find(a), uf.find(b));
            let (la, lb) = (node_of[ra], node_of[rb]);
            let id = n + merges.len();
            let size = sizes[la] + sizes[lb];
            sizes[id] = size;
            merges.push((la, lb, d, size));
            uf.union(ra, rb);
            let r = uf.find(a);
            node_of[r] = id;
        }
        Self { merges, n }
    }

    fn size(&self, node: usize) -> usize {
        if node < self.n {
            1
        } else {
            self.merges[node - self.n].3
        }
    }

    fn leaves(&self, node: usize, out: &mut Vec<usize>) {
        let mut stack = vec![node];
        while let Some(x) = stack.pop() {
            if x < self.n {
                out.push(x);
            } else {
                let (l, r, _, _) = self.merges[x - self.n];
                stack.push(r);
                stack.push(l);
            }
        }
    }
}

fn lambda_of(d: f64) -> f64 {
    1.0 / d.max(1e-12)
}

fn condense(link: &Linkage, min_cluster_size: usize) -> Vec<CondensedEdge> {
    let n = link.n;
    let root = 2 * n - 2;
    let mut out = Vec::new();
    let mut relabel: HashMap<usize, usize> = HashMap::new();
    relabel.insert(root, n);
    let mut next_label = n + 1;
    let mut queue = VecDeque::from([root]);
    let mut pts = Vec::new();
    while let Some(node) = queue.pop_front() {
        if node < n {
            continue;
        }
        let (left, right, dist, _) = link.merges[node - n];
        let lambda = lambda_of(dist);
        let parent = relabel[&node];
        let (lc, rc) = (link.size(left), link.size(right));
        let big_l = lc >= min_cluster_size;
        let big_r = rc >= min_cluster_size;
        for (child, count, big, other_big) in [(left, lc, big_l, big_r), (right, rc, big_r, big_l)] {
            if big && other_big {
                relabel.insert(child, next_label);
                out.push(CondensedEdge {
                    parent,
                    child: next_label,
                    lambda,
                    size: count,
                });
                next_label += 1;
                queue.push_back(child);
            } else if big {
                relabel.insert(child, parent);
                queue.push_back(child);
            } else {
                pts.clear();
                link.leaves(child, &mut pts);
                for &p in &pts {
                    out.push(CondensedEdge {
                        parent,
                        child: p,
                        lambda,
                        size: 1,
                    });
                }
            }
        }
    }
    out
}

/// Labels per point from the condensed tree.
fn select_and_label(tree: &[CondensedEdge], n: usize) -> Vec<i32> {
    let root = n;
    let max_label = tree.iter().map(|e| e.child.max(e.parent)).max().unwrap_or(root).max(root);
    let n_nodes = max_label - root + 1;
    let idx = |c: usize| c - root;
    let mut birth = vec![0.0f64; n_nodes];
    let mut parent_of = vec![usize::MAX; n_nodes];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
    for e in tree.iter().filter(|e| e.child >= root) {
        birth[idx(e.child)] = e.lambda;
        parent_of[idx(e.child)] = e.parent;
        children[idx(e.parent)].push(e.child);
    }
    let mut stability = vec![0.0f64; n_nodes];
    for e in tree {
        let b = birth[idx(e.parent)];
        let l = if e.lambda.is_finite() { e.lambda } else { b };
        stability[idx(e.parent)] += (l - b) * e.size as f64;
    }

    let mut selected = vec![false; n_nodes];
    if n_nodes == 1 {
        selected[0] = true;
    } else {
        let mut subtree = stability.clone();
        // children always carry larger labels than their parents
        for c in (1..n_nodes).rev() {
            let child_sum: f64 = children[c].iter().map(|&k| subtree[idx(k)]).sum();
            if children[c].is_empty() || stability[c] >= child_sum {
                selected[c] = true;
                subtree[c] = stability[c];
                let mut stack = children[c].clone();
                while let Some(k) = stack.pop() {
                    selected[idx(k)] = false;
                    stack.extend(children[idx(k)].iter().copied());
                }
            } else {
                subtree[c] = child_sum;
            }
        }
    }

    // cluster each point fell out of
    let mut point_parent = vec![root; n];
    let mut point_lambda = vec![0.0f64; n];
    for e in tree.iter().filter(|e| e.child < root) {
        point_parent[e.child] = e.parent;
        point_lambda[e.child] = e.lambda;
    }
    let mut labels = vec![-1i32; n];
    for p in 0..n {
        let mut c = point_parent[p];
        loop {
            if selected[idx(c)] {
                labels[p] = idx(c) as i32;
                break;
            }
            if c == root {
                break;
            }
            c = parent_of[idx(c)];
        }
    }

    if selected[0] {
        let lmax = point_lambda
            .iter()
            .copied()
            .fold(0.0f64, |a, b| if b.is_finite() { a.max(b) } else { a });
        for p in 0..n {
            let l = point_lambda[p];
            let score = if lmax > 0.0 && l.is_finite() {
                1.0 - l / lmax
            } else {
                0.0
            };
            if score > ROOT_OUTLIER_SCORE {
                labels[p] = -1;
            }
        }
    }
    labels
}

pub fn hdbscan(points: &Points, min_cluster_size: usize) -> Result<ClusterAssignment, ClusterError> {
    hdbscan_with(
        points,
        &HdbscanParams {
            min_cluster_size,
            min_samples: None,
        },
    )
}

pub fn hdbscan_with(points: &Points, params: &HdbscanParams) -> Result<ClusterAssignment, ClusterError> {
    let mcs = params.min_cluster_size;
    if mcs < 2 {
        return Err(ClusterError::MinClusterSize(mcs));
    }
    let k = params.min_samples.unwrap_or(mcs);
    if k == 0 {
        return Err(ClusterError::MinSamples);
    }
    let n = points.len();
    if n == 0 {
        return Err(ClusterError::Empty);
    }
    if n < mcs {
        return Ok(ClusterAssignment {
            labels: vec![-1; n],
            n_clusters: 0,
            min_cluster_size: mcs,
        });
    }
    let core = core_distances(points, k);
    let link = Linkage::build(n, mst(points, &core));
    let tree = condense(&link, mcs);
    let raw = select_and_label(&tree, n);
    Ok(canonicalize(&raw, mcs))
}

/// Renumbers clusters by first appearance and drops any below `mcs` to noise.
fn canonicalize(raw: &[i32], mcs: usize) -> ClusterAssignment {
    let mut counts: HashMap<i32, usize> = HashMap::new();
    for &l in raw.iter().filter(|&&l| l >= 0) {
        *counts.entry(l).or_default() += 1;
    }
    let mut map: HashMap<i32, i32> = HashMap::new();
    let labels = raw
        .iter()
        .map(|&l| {
            if l < 0 || counts[&l] < mcs {
                return -1;
            }
            let next = map.len() as i32;
            *map.entry(l).or_insert(next)
        })
        .collect();
    ClusterAssignment {
        labels,
        n_clusters: map.len(),
        min_cluster_size: mcs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize, start: f64, step: f64) -> Vec<Vec<f64>> {
        (0..n).map(|i| vec![start + i as f64 * step, 0.0]).collect()
    }

    #[test]
    fn too_few_points_are_noise() {
        let p = Points::from_rows(&line(5, 0.0, 0.1));
        let a = hdbscan(&p, 20).unwrap();
        assert_eq!(a.labels, vec![-1; 5]);
        assert_eq!(a.n_clusters, 0);
    }

    #[test]
    fn min_cluster_size_validated() {
        let p = Points::from_rows(&line(5, 0.0, 0.1));
        assert!(matches!(hdbscan(&p, 1), Err(ClusterError::MinClusterSize(1))));
    }

    #[test]
    fn two_lines_two_clusters() {
        let mut rows = line(15, 0.0, 0.1);
        rows.extend(line(15, 100.0, 0.1));
        let a = hdbscan(&Points::from_rows(&rows), 5).unwrap();
        assert_eq!(a.n_clusters, 2);
        assert_eq!(a.noise_count(), 0);
        assert!(a.labels[..15].iter().all(|&l| l == 0));
        assert!(a.labels[15..].iter().all(|&l| l == 1));
    }

    #[test]
    fn single_linkage_sizes() {
        let p = Points::from_rows(&line(4, 0.0, 1.0));
        let core = core_distances(&p, 2);
        assert_eq!(core, vec![1.0; 4]);
        let link = Linkage::build(4, mst(&p, &core));
        assert_eq!(link.merges.last().unwrap().3, 4);
    }
}
