//! Exact t-SNE with a per-point bandwidth search, early exaggeration,
//! momentum and per-coordinate adaptive gains.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{sq_dist, ClusterError, Points};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneResult {
    /// `n x 2`, row-major.
    pub embedding: Points,
    /// KL(P || Q) at the initial layout.
    pub initial_kl: f64,
    pub final_kl: f64,
}

const PERPLEXITY_TOL: f64 = 1e-5;
const MAX_BISECTIONS: usize = 200;
const MIN_GAIN: f64 = 0.01;
const P_FLOOR: f64 = 1e-12;

/// Conditional affinities for row `i` at precision `beta`; returns the entropy in nats.
fn row_affinities(d2: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    // shift by the smallest off-diagonal distance for stability
    let min = d2
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for (j, (o, &d)) in out.iter_mut().zip(d2).enumerate() {
        *o = if j == i { 0.0 } else { (-(d - min) * beta).exp() };
        sum += *o;
    }
    let mut weighted = 0.0;
    for (o, &d) in out.iter_mut().zip(d2) {
        *o /= sum;
        weighted += *o * (d - min);
    }
    sum.ln() + beta * weighted
}

/// Row-conditional affinities, each row searched to the target perplexity.
fn conditional_probabilities(points: &Points, perplexity: f64) -> Vec<f64> {
    let n = points.len();
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    let mut d2 = vec![0.0; n];
    for i in 0..n {
        for (j, d) in d2.iter_mut().enumerate() {
            *d = sq_dist(points.row(i), points.row(j));
        }
        let row = &mut p[i * n..(i + 1) * n];
        let (mut beta, mut lo, mut hi) = (1.0, 0.0, f64::INFINITY);
        for _ in 0..MAX_BISECTIONS {
            let h = row_affinities(&d2, i, beta, row);
            let diff = h - target;
            if diff.abs() < PERPLEXITY_TOL {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
    }
    p
}

/// Symmetric joint probabilities `P`, row-major `n x n`.
fn joint_probabilities(points: &Points, perplexity: f64) -> Vec<f64> {
    let n = points.len();
    let p = conditional_probabilities(points, perplexity);
    let denom = 2.0 * n as f64;
    let mut joint = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                joint[i * n + j] = ((p[i * n + j] + p[j * n + i]) / denom).max(P_FLOOR);
            }
        }
    }
    joint
}

/// Student-t kernel numerators `1 / (1 + |yi - yj|^2)` and their sum.
fn kernel(y: &[f64], n: usize, num: &mut [f64]) -> f64 {
    let mut sum = 0.0;
    for i in 0..n {
        num[i * n + i] = 0.0;
        for j in i + 1..n {
            let dx = y[2 * i] - y[2 * j];
            let dy = y[2 * i + 1] - y[2 * j + 1];
            let v = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = v;
            num[j * n + i] = v;
            sum += 2.0 * v;
        }
    }
    sum
}

fn kl_divergence(p: &[f64], num: &[f64], sum: f64, n: usize) -> f64 {
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let pij = p[i * n + j];
                let qij = (num[i * n + j] / sum).max(P_FLOOR);
                kl += pij * (pij / qij).ln();
            }
        }
    }
    kl
}

pub fn tsne_2d(points: &Points, cfg: &TsneConfig) -> Result<TsneResult, ClusterError> {
    let n = points.len();
    if !(cfg.perplexity > 0.0) || cfg.perplexity >= (n as f64 - 1.0) / 3.0 {
        return Err(ClusterError::Perplexity {
            perplexity: cfg.perplexity,
            count: n,
        });
    }
    if !(cfg.learning_rate > 0.0) {
        return Err(ClusterError::Config("learning rate must be positive".into()));
    }
    let p = joint_probabilities(points, cfg.perplexity);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, 1e-4).expect("valid sd");
    let mut y: Vec<f64> = (0..2 * n).map(|_| normal.sample(&mut rng)).collect();
    let mut update = vec![0.0; 2 * n];
    let mut gains = vec![1.0f64; 2 * n];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![0.0; 2 * n];

    let sum = kernel(&y, n, &mut num);
    let initial_kl = kl_divergence(&p, &num, sum, n);

    for iter in 0..cfg.iterations {
        let exaggerate = iter < cfg.exaggeration_iters;
        let ex = if exaggerate { cfg.early_exaggeration } else { 1.0 };
        let momentum = if exaggerate {
            cfg.initial_momentum
        } else {
            cfg.final_momentum
        };
        let sum = kernel(&y, n, &mut num);
        grad.iter_mut().for_each(|g| *g = 0.0);
        for i in 0..n {
            let (mut gx, mut gy) = (0.0, 0.0);
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w = num[i * n + j];
                let mult = (ex * p[i * n + j] - w / sum) * w;
                gx += mult * (y[2 * i] - y[2 * j]);
                gy += mult * (y[2 * i + 1] - y[2 * j + 1]);
            }
            grad[2 * i] = 4.0 * gx;
            grad[2 * i + 1] = 4.0 * gy;
        }
        for k in 0..2 * n {
            gains[k] = if (grad[k] > 0.0) != (update[k] > 0.0) {
                gains[k] + 0.2
            } else {
                (gains[k] * 0.8).max(MIN_GAIN)
            };
            update[k] = momentum * update[k] - cfg.learning_rate * gains[k] * grad[k];
            y[k] += update[k];
        }
        let (mut mx, mut my) = (0.0, 0.0);
        for i in 0..n {
            mx += y[2 * i];
            my += y[2 * i + 1];
        }
        mx /= n as f64;
        my /= n as f64;
        for i in 0..n {
            y[2 * i] -= mx;
            y[2 * i + 1] -= my;
        }
    }

    let sum = kernel(&y, n, &mut num);
    let final_kl = kl_divergence(&p, &num, sum, n);
    Ok(TsneResult {
        embedding: Points::new(2, y),
        initial_kl,
        final_kl,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perplexity_matches_target() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64).sin() * 3.0, (i as f64 * 0.3).cos()]).collect();
        let pts = Points::from_rows(&rows);
        let n = pts.len();
        let cond = conditional_probabilities(&pts, 10.0);
        for row in cond.chunks_exact(n) {
            let h: f64 = row.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum();
            assert!((h.exp() - 10.0).abs() < 1e-3, "row perplexity {}", h.exp());
        }
        let p = joint_probabilities(&pts, 10.0);
        assert!(p.iter().all(|v| v.is_finite() && *v >= 0.0));
        let total: f64 = p.iter().sum();
        assert!((total - 1.0).abs() < 1e-6, "P sums to {total}");
    }

    #[test]
    fn infeasible_perplexity() {
        let pts = Points::from_rows(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]]);
        assert!(matches!(
            tsne_2d(&pts, &TsneConfig::default()),
            Err(ClusterError::Perplexity { .. })
        ));
    }
}
