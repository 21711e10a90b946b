use serde::{Deserialize, Serialize};

use super::RadiomicsError;
use crate::container;

/// Columns whose standard deviation is at or below this are dropped.
const ZERO_VARIANCE: f64 = 1e-12;
const KIND: &str = "feature_scaler";

/// Per-column z-scoring fitted on a training matrix. Zero-variance columns are
/// flagged and removed by [`FeatureScaler::apply`].
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub keep: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    width: usize,
    keep: Vec<bool>,
}

impl FeatureScaler {
    /// Population mean and standard deviation per column.
    pub fn fit(matrix: &[Vec<f64>]) -> Result<Self, RadiomicsError> {
        let width = matrix.first().map(Vec::len).ok_or(RadiomicsError::InsufficientData { needed: 1, got: 0 })?;
        let n = matrix.len() as f64;
        let mut mean = vec![0.0; width];
        for row in matrix {
            if row.len() != width {
                return Err(RadiomicsError::ShapeMismatch {
                    expected: width,
                    got: row.len(),
                });
            }
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; width];
        for row in matrix {
            for j in 0..width {
                var[j] += (row[j] - mean[j]).powi(2);
            }
        }
        let std: Vec<f64> = var.iter().map(|v| (v / n).sqrt()).collect();
        let keep = std
            .iter()
            .zip(&mean)
            .map(|(&s, &m)| s > ZERO_VARIANCE * (1.0 + m.abs()))
            .collect();
        Ok(Self { mean, std, keep })
    }

    pub fn input_width(&self) -> usize {
        self.mean.len()
    }

    pub fn output_width(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    /// Indices of retained input columns.
    pub fn kept_indices(&self) -> Vec<usize> {
        (0..self.keep.len()).filter(|&i| self.keep[i]).collect()
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>, RadiomicsError> {
        if v.len() != self.mean.len() {
            return Err(RadiomicsError::ShapeMismatch {
                expected: self.mean.len(),
                got: v.len(),
            });
        }
        Ok((0..v.len())
            .filter(|&j| self.keep[j])
            .map(|j| (v[j] - self.mean[j]) / self.std[j])
            .collect())
    }

    pub fn apply_matrix(&self, m: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, RadiomicsError> {
        m.iter().map(|r| self.apply(r)).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload: Vec<f32> = self.mean.iter().map(|&v| v as f32).collect();
        payload.extend(self.std.iter().map(|&v| v as f32));
        container::encode(
            KIND,
            &Meta {
                width: self.mean.len(),
                keep: self.keep.clone(),
            },
            &payload,
        )
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, container::ContainerError> {
        let (meta, values): (Meta, Vec<f32>) = container::decode(KIND, bytes)?;
        if values.len() != 2 * meta.width || meta.keep.len() != meta.width {
            return Err(container::ContainerError::Length {
                expected: 2 * meta.width,
                got: values.len(),
            });
        }
        let (m, s) = values.split_at(meta.width);
        Ok(Self {
            mean: m.iter().map(|&v| v as f64).collect(),
            std: s.iter().map(|&v| v as f64).collect(),
            keep: meta.keep,
        })
    }
}
