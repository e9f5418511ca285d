use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{accuracy_of, ClassifierError, LabeledSet};
use crate::embedding::EmbeddingMatrix;

/// Affine layer with row-major `out x inp` weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub inp: usize,
    pub out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

/// Feed-forward network with ReLU between layers and a single logit output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<DenseLayer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: vec![1024, 256, 32],
            learning_rate: 1e-4,
            batch_size: 1024,
            epochs: 50,
            patience: 10,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// `c = a * b` (`beta = 0`) or `c += a * b` (`beta = 1`) with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: every (row, col) index reachable through the strides lies
    // inside the slices; callers pass shapes matching the buffers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy on a logit, numerically stable form.
#[inline]
fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

impl MlpModel {
    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` weights and biases. `sizes` runs input to output.
    pub fn init(sizes: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with(sizes, &mut rng)
    }

    fn init_with(sizes: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let layers = sizes
            .windows(2)
            .map(|p| {
                let (inp, out) = (p[0], p[1]);
                let bound = 1.0 / (inp as f64).sqrt();
                let w = (0..inp * out).map(|_| rng.random_range(-bound..bound)).collect();
                let b = (0..out).map(|_| rng.random_range(-bound..bound)).collect();
                DenseLayer { inp, out, w, b }
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inp)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.out));
        s
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Pre-activations of every layer for a row-major batch.
    fn forward(&self, x: &[f64], batch: usize) -> Vec<Vec<f64>> {
        let mut zs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for (li, layer) in self.layers.iter().enumerate() {
            let input: Vec<f64>;
            let a: &[f64] = if li == 0 {
                x
            } else {
                input = zs[li - 1].iter().map(|&v| v.max(0.0)).collect();
                &input
            };
            let mut z = vec![0.0; batch * layer.out];
            for row in z.chunks_exact_mut(layer.out) {
                row.copy_from_slice(&layer.b);
            }
            gemm(
                batch,
                layer.inp,
                layer.out,
                a,
                (layer.inp, 1),
                &layer.w,
                (1, layer.inp),
                1.0,
                &mut z,
            );
            zs.push(z);
        }
        zs
    }

    /// Output logits for a row-major batch of `f64` inputs.
    pub fn forward_logits(&self, x: &[f64], batch: usize) -> Vec<f64> {
        self.forward(x, batch).pop().unwrap_or_default()
    }

    pub fn logit(&self, x: &[f32]) -> f64 {
        let x: Vec<f64> = x.iter().map(|&v| f64::from(v)).collect();
        self.forward_logits(&x, 1)[0]
    }

    pub fn logits(&self, m: &EmbeddingMatrix) -> Vec<f64> {
        let mut out = Vec::with_capacity(m.count());
        let chunk = 1024;
        let d = m.dim();
        for block in m.as_slice().chunks(chunk * d) {
            let x: Vec<f64> = block.iter().map(|&v| f64::from(v)).collect();
            out.extend(self.forward_logits(&x, block.len() / d));
        }
        out
    }

    pub fn probability(&self, x: &[f32]) -> f64 {
        sigmoid(self.logit(x))
    }

    /// Mean binary cross-entropy over the batch.
    pub fn loss(&self, x: &[f64], y: &[u8]) -> f64 {
        let z = self.forward_logits(x, y.len());
        z.iter()
            .zip(y)
            .map(|(&z, &t)| bce_with_logit(z, f64::from(t)))
            .sum::<f64>()
            / y.len() as f64
    }

    /// Mean loss and `(dW, db)` for every layer.
    pub fn loss_and_gradients(&self, x: &[f64], y: &[u8]) -> (f64, Vec<(Vec<f64>, Vec<f64>)>) {
        let batch = y.len();
        let zs = self.forward(x, batch);
        let logits = zs.last().expect("at least one layer");
        let inv = 1.0 / batch as f64;
        let mut loss = 0.0;
        let mut dz: Vec<f64> = logits
            .iter()
            .zip(y)
            .map(|(&z, &t)| {
                loss += bce_with_logit(z, f64::from(t));
                (sigmoid(z) - f64::from(t)) * inv
            })
            .collect();
        let mut grads = vec![(Vec::new(), Vec::new()); self.layers.len()];
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let act: Vec<f64>;
            let a_prev: &[f64] = if li == 0 {
                x
            } else {
                act = zs[li - 1].iter().map(|&v| v.max(0.0)).collect();
                &act
            };
            let mut dw = vec![0.0; layer.out * layer.inp];
            gemm(
                layer.out,
                batch,
                layer.inp,
                &dz,
                (1, layer.out),
                a_prev,
                (layer.inp, 1),
                0.0,
                &mut dw,
            );
            let mut db = vec![0.0; layer.out];
            for row in dz.chunks_exact(layer.out) {
                db.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
            }
            if li > 0 {
                let mut da = vec![0.0; batch * layer.inp];
                gemm(
                    batch,
                    layer.out,
                    layer.inp,
                    &dz,
                    (layer.out, 1),
                    &layer.w,
                    (layer.inp, 1),
                    0.0,
                    &mut da,
                );
                for (d, &z) in da.iter_mut().zip(&zs[li - 1]) {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                }
                dz = da;
            }
            grads[li] = (dw, db);
        }
        (loss * inv, grads)
    }
}

/// One Adam update of `theta` in place. `t` is the 1-based step count.
#[allow(clippy::too_many_arguments)]
pub fn adam_step(
    theta: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    let bc1 = 1.0 - beta1.powi(t as i32);
    let bc2 = 1.0 - beta2.powi(t as i32);
    for i in 0..theta.len() {
        let g = grad[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// First and second moments for every weight and bias tensor of a network.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub t: u64,
    moments: Vec<[(Vec<f64>, Vec<f64>); 2]>,
}

impl AdamState {
    pub fn new(model: &MlpModel) -> Self {
        let moments = model
            .layers
            .iter()
            .map(|l| {
                [
                    (vec![0.0; l.w.len()], vec![0.0; l.w.len()]),
                    (vec![0.0; l.b.len()], vec![0.0; l.b.len()]),
                ]
            })
            .collect();
        Self { t: 0, moments }
    }

    pub fn step(&mut self, model: &mut MlpModel, grads: &[(Vec<f64>, Vec<f64>)], cfg: &MlpConfig) {
        self.t += 1;
        for ((layer, (gw, gb)), [mw, mb]) in model.layers.iter_mut().zip(grads).zip(&mut self.moments) {
            let lr = cfg.learning_rate;
            adam_step(&mut layer.w, gw, &mut mw.0, &mut mw.1, self.t, lr, cfg.beta1, cfg.beta2, cfg.eps);
            adam_step(&mut layer.b, gb, &mut mb.0, &mut mb.1, self.t, lr, cfg.beta1, cfg.beta2, cfg.eps);
        }
    }
}

/// Mini-batch Adam on binary cross-entropy. Returns the weights from the
/// epoch with the best validation accuracy (earliest on ties).
pub fn train_mlp(
    train: &LabeledSet,
    val: &LabeledSet,
    cfg: &MlpConfig,
) -> Result<MlpModel, ClassifierError> {
    train.check_trainable()?;
    if val.dim() != train.dim() {
        return Err(ClassifierError::DimMismatch {
            expected: train.dim(),
            actual: val.dim(),
        });
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(ClassifierError::Config("batch size and epochs must be positive".into()));
    }
    if !(cfg.learning_rate > 0.0) {
        return Err(ClassifierError::Config("learning rate must be positive".into()));
    }
    let d = train.dim();
    let mut sizes = vec![d];
    sizes.extend(&cfg.hidden);
    sizes.push(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = MlpModel::init_with(&sizes, &mut rng);
    let mut adam = AdamState::new(&model);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = (accuracy_of(&model.logits(&val.x), &val.y), model.clone());
    let mut since_best = 0;
    let mut xb = Vec::with_capacity(cfg.batch_size * d);
    let mut yb = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            xb.clear();
            yb.clear();
            for &i in idx {
                xb.extend(train.x.row(i).iter().map(|&v| f64::from(v)));
                yb.push(train.y[i]);
            }
            let (loss, grads) = model.loss_and_gradients(&xb, &yb);
            if !loss.is_finite() {
                return Err(ClassifierError::NonFiniteLoss {
                    epoch,
                    batch: bi,
                    loss,
                });
            }
            adam.step(&mut model, &grads, cfg);
        }
        let acc = accuracy_of(&model.logits(&val.x), &val.y);
        log::debug!("mlp epoch={epoch} val_acc={acc:.4}");
        if acc > best.0 {
            best = (acc, model.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience > 0 && since_best >= cfg.patience {
                break;
            }
        }
    }
    Ok(best.1)
}
