use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::container;
use crate::labels::{Class, ClassProbabilities};

pub const DEFAULT_WIDTHS: [usize; 7] = [1024, 512, 256, 128, 64, 32, 3];
pub const DEFAULT_CLASS_WEIGHTS: [f64; 3] = [0.1, 0.3, 0.9];
const KIND: &str = "dense_net";

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `out x in`.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

/// Fully connected ReLU network with a softmax output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNetParams {
    pub layers: Vec<DenseLayer>,
    pub dropout: f64,
    pub l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenseTrainConfig {
    pub widths: Vec<usize>,
    pub lr: f64,
    pub batch: usize,
    pub dropout: f64,
    pub l2: f64,
    pub class_weights: [f64; 3],
    pub epochs: usize,
    pub seed: u64,
}

impl Default for DenseTrainConfig {
    fn default() -> Self {
        Self {
            widths: DEFAULT_WIDTHS.to_vec(),
            lr: 1e-3,
            batch: 128,
            dropout: 0.2,
            l2: 1e-4,
            class_weights: DEFAULT_CLASS_WEIGHTS,
            epochs: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Class-weighted cross-entropy on the training set (inference mode);
    /// entry 0 is before the first update.
    pub epoch_losses: Vec<f64>,
}

struct Cache {
    /// Layer inputs (after activation and dropout), one per layer.
    inputs: Vec<DMatrix<f64>>,
    /// Pre-activations of hidden layers.
    pre: Vec<DMatrix<f64>>,
    /// Dropout scale masks of hidden layers.
    masks: Vec<Option<DMatrix<f64>>>,
    probs: DMatrix<f64>,
}

fn softmax_columns(z: &mut DMatrix<f64>) {
    for mut col in z.column_iter_mut() {
        let m = col.max();
        col.apply(|v| *v = (*v - m).exp());
        let s = col.sum();
        col /= s;
    }
}

impl DenseNetParams {
    /// He-uniform weights (`limit = sqrt(6 / fan_in)`), zero biases.
    pub fn init(input: usize, widths: &[usize], dropout: f64, l2: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fan_in = input;
        let layers = widths
            .iter()
            .map(|&out| {
                let limit = (6.0 / fan_in as f64).sqrt();
                let weights = DMatrix::from_fn(out, fan_in, |_, _| rng.random_range(-limit..limit));
                fan_in = out;
                DenseLayer {
                    weights,
                    bias: DVector::zeros(out),
                }
            })
            .collect();
        Self { layers, dropout, l2 }
    }

    pub fn zeros(input: usize, widths: &[usize]) -> Self {
        let mut fan_in = input;
        let layers = widths
            .iter()
            .map(|&out| {
                let l = DenseLayer {
                    weights: DMatrix::zeros(out, fan_in),
                    bias: DVector::zeros(out),
                };
                fan_in = out;
                l
            })
            .collect();
        Self {
            layers,
            dropout: 0.0,
            l2: 0.0,
        }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.weights.nrows()).collect()
    }

    pub fn n_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Forward pass over the columns of `x`. Dropout is active only when a
    /// RNG is supplied.
    fn forward_batch(&self, x: DMatrix<f64>, mut rng: Option<&mut ChaCha8Rng>) -> Cache {
        let keep = 1.0 - self.dropout;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut masks = Vec::with_capacity(last);
        let mut a = x;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.weights * &a;
            for mut col in z.column_iter_mut() {
                col += &layer.bias;
            }
            inputs.push(a);
            if li == last {
                softmax_columns(&mut z);
                return Cache {
                    inputs,
                    pre,
                    masks,
                    probs: z,
                };
            }
            let mut h = z.map(|v| v.max(0.0));
            let mask = match rng.as_deref_mut() {
                Some(r) if self.dropout > 0.0 => {
                    let m = DMatrix::from_fn(h.nrows(), h.ncols(), |_, _| {
                        if r.random::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    });
                    h.component_mul_assign(&m);
                    Some(m)
                }
                _ => None,
            };
            pre.push(z);
            masks.push(mask);
            a = h;
        }
        unreachable!("network has at least one layer")
    }

    fn check_input(&self, len: usize) -> Result<(), ModelError> {
        if len != self.input_width() {
            return Err(ModelError::ShapeMismatch {
                expected: vec![self.input_width()],
                got: vec![len],
            });
        }
        Ok(())
    }

    /// Output distribution for one input (any output width).
    pub fn predict_raw(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.check_input(x.len())?;
        let c = self.forward_batch(DMatrix::from_column_slice(x.len(), 1, x), None);
        Ok(c.probs.column(0).iter().copied().collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::with_capacity(self.n_parameters());
        for l in &self.layers {
            for r in 0..l.weights.nrows() {
                payload.extend(l.weights.row(r).iter().map(|&v| v as f32));
            }
            payload.extend(l.bias.iter().map(|&v| v as f32));
        }
        container::encode(
            KIND,
            &DenseMeta {
                input: self.input_width(),
                widths: self.widths(),
                dropout: self.dropout,
                l2: self.l2,
                activations: self
                    .layers
                    .iter()
                    .enumerate()
                    .map(|(i, _)| if i + 1 == self.layers.len() { "softmax" } else { "relu" }.to_string())
                    .collect(),
            },
            &payload,
        )
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let (meta, v): (DenseMeta, Vec<f32>) = container::decode(KIND, bytes)?;
        let mut fan_in = meta.input;
        let mut off = 0;
        let mut layers = Vec::with_capacity(meta.widths.len());
        for &out in &meta.widths {
            let need = out * fan_in + out;
            let chunk = v
                .get(off..off + need)
                .ok_or_else(|| ModelError::Corrupt("dense payload size".into()))?;
            let w: Vec<f64> = chunk[..out * fan_in].iter().map(|&x| x as f64).collect();
            layers.push(DenseLayer {
                weights: DMatrix::from_row_slice(out, fan_in, &w),
                bias: DVector::from_iterator(out, chunk[out * fan_in..].iter().map(|&x| x as f64)),
            });
            off += need;
            fan_in = out;
        }
        if off != v.len() || layers.is_empty() {
            return Err(ModelError::Corrupt("dense payload size".into()));
        }
        Ok(Self {
            layers,
            dropout: meta.dropout,
            l2: meta.l2,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct DenseMeta {
    input: usize,
    widths: Vec<usize>,
    dropout: f64,
    l2: f64,
    activations: Vec<String>,
}

/// Class probabilities for one feature vector. In training mode dropout masks
/// are drawn from `rng` (inverted dropout); otherwise the pass is
/// deterministic.
pub fn dense_forward(
    params: &DenseNetParams,
    x: &[f64],
    training: bool,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<ClassProbabilities, ModelError> {
    params.check_input(x.len())?;
    let out = params.widths().last().copied().unwrap_or(0);
    if out != 3 {
        return Err(ModelError::ShapeMismatch {
            expected: vec![3],
            got: vec![out],
        });
    }
    let rng = if training { rng } else { None };
    let c = params.forward_batch(DMatrix::from_column_slice(x.len(), 1, x), rng);
    let p = c.probs.column(0);
    Ok(ClassProbabilities::from_array([p[0], p[1], p[2]]))
}

/// Gradients of [`batch_loss`] with respect to every layer.
pub type Gradients = Vec<(DMatrix<f64>, DVector<f64>)>;

fn batch_matrix(x: &[Vec<f64>], idx: &[usize]) -> DMatrix<f64> {
    let d = x[idx[0]].len();
    DMatrix::from_fn(d, idx.len(), |r, c| x[idx[c]][r])
}

/// Weighted cross-entropy `sum(w * CE) / sum(w)` plus `l2 * sum(W²)` over the
/// samples `idx`, with analytic gradients.
pub fn batch_loss_and_grad(
    params: &DenseNetParams,
    x: &[Vec<f64>],
    y: &[usize],
    weights: &[f64],
    idx: &[usize],
    rng: Option<&mut ChaCha8Rng>,
) -> (f64, Gradients) {
    let cache = params.forward_batch(batch_matrix(x, idx), rng);
    let wsum: f64 = idx.iter().map(|&i| weights[i]).sum();
    let mut loss = 0.0;
    let mut delta = cache.probs.clone();
    for (c, &i) in idx.iter().enumerate() {
        let p = cache.probs[(y[i], c)].max(1e-300);
        loss -= weights[i] * p.ln();
        delta[(y[i], c)] -= 1.0;
        let s = weights[i] / wsum;
        delta.column_mut(c).scale_mut(s);
    }
    loss /= wsum;
    loss += params.l2 * params.layers.iter().map(|l| l.weights.norm_squared()).sum::<f64>();
    let n = params.layers.len();
    let mut grads: Gradients = Vec::with_capacity(n);
    for li in (0..n).rev() {
        let layer = &params.layers[li];
        let gw = &delta * cache.inputs[li].transpose() + &layer.weights * (2.0 * params.l2);
        let gb = delta.column_sum();
        grads.push((gw, gb));
        if li > 0 {
            let mut back = layer.weights.transpose() * &delta;
            if let Some(m) = &cache.masks[li - 1] {
                back.component_mul_assign(m);
            }
            let z = &cache.pre[li - 1];
            back.zip_apply(z, |b, zv| {
                if zv <= 0.0 {
                    *b = 0.0
                }
            });
            delta = back;
        }
    }
    grads.reverse();
    (loss, grads)
}

/// Inference-mode weighted cross-entropy over a dataset (no penalty).
pub fn weighted_cross_entropy(params: &DenseNetParams, x: &[Vec<f64>], y: &[usize], weights: &[f64]) -> f64 {
    let idx: Vec<usize> = (0..x.len()).collect();
    let mut total = 0.0;
    let mut wsum = 0.0;
    for chunk in idx.chunks(256) {
        let c = params.forward_batch(batch_matrix(x, chunk), None);
        for (col, &i) in chunk.iter().enumerate() {
            total -= weights[i] * c.probs[(y[i], col)].max(1e-300).ln();
            wsum += weights[i];
        }
    }
    total / wsum
}

struct Nadam {
    m: Gradients,
    v: Gradients,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl Nadam {
    fn new(p: &DenseNetParams) -> Self {
        let zeros: Gradients = p
            .layers
            .iter()
            .map(|l| (DMatrix::zeros(l.weights.nrows(), l.weights.ncols()), DVector::zeros(l.bias.len())))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, p: &mut DenseNetParams, g: &Gradients, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        let upd = |param: &mut f64, grad: f64, m: &mut f64, v: &mut f64| {
            *m = BETA1 * *m + (1.0 - BETA1) * grad;
            *v = BETA2 * *v + (1.0 - BETA2) * grad * grad;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            let nesterov = BETA1 * m_hat + (1.0 - BETA1) * grad / c1;
            *param -= lr * nesterov / (v_hat.sqrt() + EPS);
        };
        for (li, layer) in p.layers.iter_mut().enumerate() {
            let (gw, gb) = &g[li];
            let (mw, mb) = &mut self.m[li];
            let (vw, vb) = &mut self.v[li];
            for k in 0..gw.len() {
                upd(&mut layer.weights[k], gw[k], &mut mw[k], &mut vw[k]);
            }
            for k in 0..gb.len() {
                upd(&mut layer.bias[k], gb[k], &mut mb[k], &mut vb[k]);
            }
        }
    }
}

/// Mini-batch Nadam training on class-weighted cross-entropy with an L2
/// penalty on the weight matrices. Samples whose class weight is zero are
/// dropped before training, so they cannot influence shuffling or dropout.
pub fn dense_train(
    x: &[Vec<f64>],
    y: &[Class],
    cfg: &DenseTrainConfig,
) -> Result<(DenseNetParams, TrainReport), ModelError> {
    if x.len() != y.len() {
        return Err(ModelError::ShapeMismatch {
            expected: vec![x.len()],
            got: vec![y.len()],
        });
    }
    let keep: Vec<usize> = (0..x.len()).filter(|&i| cfg.class_weights[y[i].index()] > 0.0).collect();
    if keep.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let xs: Vec<Vec<f64>> = keep.iter().map(|&i| x[i].clone()).collect();
    let ys: Vec<usize> = keep.iter().map(|&i| y[i].index()).collect();
    let ws: Vec<f64> = ys.iter().map(|&c| cfg.class_weights[c]).collect();
    let dim = xs[0].len();
    if let Some(r) = xs.iter().find(|r| r.len() != dim) {
        return Err(ModelError::ShapeMismatch {
            expected: vec![dim],
            got: vec![r.len()],
        });
    }
    let mut params = DenseNetParams::init(dim, &cfg.widths, cfg.dropout, cfg.l2, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut opt = Nadam::new(&params);
    let mut losses = vec![weighted_cross_entropy(&params, &xs, &ys, &ws)];
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let batch = cfg.batch.max(1);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (b, chunk) in order.chunks(batch).enumerate() {
            let dropout_rng = (cfg.dropout > 0.0).then_some(&mut rng);
            let (loss, grads) = batch_loss_and_grad(&params, &xs, &ys, &ws, chunk, dropout_rng);
            if !loss.is_finite() {
                return Err(ModelError::NonFiniteLoss {
                    epoch,
                    batch: b,
                    loss,
                });
            }
            opt.step(&mut params, &grads, cfg.lr);
        }
        let l = weighted_cross_entropy(&params, &xs, &ys, &ws);
        if !l.is_finite() {
            return Err(ModelError::NonFiniteLoss {
                epoch,
                batch: usize::MAX,
                loss: l,
            });
        }
        tracing::debug!(epoch, loss = l, "dense epoch");
        losses.push(l);
    }
    Ok((params, TrainReport { epoch_losses: losses }))
}
