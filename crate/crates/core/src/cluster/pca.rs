use nalgebra::{DMatrix, SymmetricEigen};

use super::{ClusterError, Points};

#[derive(Debug, Clone)]
pub struct PcaResult {
    pub mean: Vec<f64>,
    /// `d` unit eigenvectors, largest variance first.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    pub projected: Points,
}

impl PcaResult {
    /// Maps projected coordinates back into the input space.
    pub fn reconstruct(&self) -> Points {
        let dim = self.mean.len();
        let mut data = Vec::with_capacity(self.projected.len() * dim);
        for z in self.projected.rows() {
            let mut x = self.mean.clone();
            for (c, &zc) in self.components.iter().zip(z) {
                x.iter_mut().zip(c).for_each(|(xi, &ci)| *xi += zc * ci);
            }
            data.extend(x);
        }
        Points::new(dim, data)
    }
}

/// Projection onto the top-`d` covariance eigenvectors. Each eigenvector is
/// signed so that its largest-magnitude entry is positive.
pub fn pca_reduce(points: &Points, d: usize) -> Result<PcaResult, ClusterError> {
    let (n, dim) = (points.len(), points.dim);
    if d == 0 || d >= n || d > dim {
        return Err(ClusterError::BadTargetDim { d, count: n, dim });
    }
    let mut mean = vec![0.0; dim];
    for r in points.rows() {
        mean.iter_mut().zip(r).for_each(|(m, &v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, dim, |i, j| points.row(i)[j] - mean[j]);
    let cov = (centered.transpose() * &centered) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut components = Vec::with_capacity(d);
    let mut explained_variance = Vec::with_capacity(d);
    for &k in order.iter().take(d) {
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let pivot = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
            .map_or(0, |(i, _)| i);
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
        explained_variance.push(eig.eigenvalues[k].max(0.0));
    }
    let mut data = Vec::with_capacity(n * d);
    for i in 0..n {
        let row = centered.row(i);
        for c in &components {
            data.push(row.iter().zip(c).map(|(a, b)| a * b).sum());
        }
    }
    Ok(PcaResult {
        mean,
        components,
        explained_variance,
        projected: Points::new(d, data),
    })
}
