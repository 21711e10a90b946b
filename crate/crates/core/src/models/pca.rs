use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::container;

const KIND: &str = "pca";

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// Retained principal axes, unit length, by decreasing variance.
    pub axes: Vec<Vec<f64>>,
    /// Variance along every axis (retained or not), non-increasing.
    pub explained_variance: Vec<f64>,
    pub n_components: usize,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    dim: usize,
    n_components: usize,
    explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn explained_ratio(&self) -> Vec<f64> {
        let total: f64 = self.explained_variance.iter().sum();
        self.explained_variance.iter().map(|v| v / total).collect()
    }

    /// Projection of the centred vector onto the retained axes.
    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        if x.len() != self.dim() {
            return Err(ModelError::ShapeMismatch {
                expected: vec![self.dim()],
                got: vec![x.len()],
            });
        }
        Ok(self
            .axes
            .iter()
            .map(|a| a.iter().zip(x).zip(&self.mean).map(|((a, x), m)| a * (x - m)).sum())
            .collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload: Vec<f32> = self.mean.iter().map(|&v| v as f32).collect();
        for a in &self.axes {
            payload.extend(a.iter().map(|&v| v as f32));
        }
        container::encode(
            KIND,
            &Meta {
                dim: self.dim(),
                n_components: self.n_components,
                explained_variance: self.explained_variance.clone(),
            },
            &payload,
        )
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let (meta, v): (Meta, Vec<f32>) = container::decode(KIND, bytes)?;
        if v.len() != meta.dim * (meta.n_components + 1) {
            return Err(ModelError::Corrupt("pca payload size".into()));
        }
        let f: Vec<f64> = v.iter().map(|&x| x as f64).collect();
        Ok(Self {
            mean: f[..meta.dim].to_vec(),
            axes: f[meta.dim..].chunks(meta.dim).map(<[f64]>::to_vec).collect(),
            explained_variance: meta.explained_variance,
            n_components: meta.n_components,
        })
    }
}

/// Principal components of the sample covariance (n - 1 denominator). Keeps
/// the fewest components whose cumulative variance ratio reaches
/// `var_fraction`. Axis signs are fixed so the largest-magnitude entry is
/// positive.
pub fn pca_fit(x: &[Vec<f64>], var_fraction: f64) -> Result<PcaModel, ModelError> {
    let n = x.len();
    if n < 2 {
        return Err(ModelError::TooFewPoints { needed: 2, got: n });
    }
    let d = x[0].len();
    if let Some(r) = x.iter().find(|r| r.len() != d) {
        return Err(ModelError::ShapeMismatch {
            expected: vec![d],
            got: vec![r.len()],
        });
    }
    let mut mean = vec![0.0; d];
    for r in x {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centred = DMatrix::from_fn(n, d, |i, j| x[i][j] - mean[j]);
    let cov = (centred.transpose() * &centred) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let explained_variance: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = explained_variance.iter().sum();
    if total <= 0.0 {
        return Err(ModelError::DegenerateMatrix);
    }
    let mut k = 0;
    let mut cum = 0.0;
    while k < d {
        cum += explained_variance[k];
        k += 1;
        if cum / total >= var_fraction - 1e-12 {
            break;
        }
    }
    let axes = order[..k]
        .iter()
        .map(|&i| {
            let mut a: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            a.iter_mut().for_each(|v| *v /= norm);
            let pivot = a
                .iter()
                .enumerate()
                .max_by(|(i, p), (j, q)| p.abs().total_cmp(&q.abs()).then(j.cmp(i)))
                .map(|(i, _)| i)
                .unwrap();
            if a[pivot] < 0.0 {
                a.iter_mut().for_each(|v| *v = -*v);
            }
            a
        })
        .collect();
    Ok(PcaModel {
        mean,
        axes,
        explained_variance,
        n_components: k,
    })
}
