//! Segmentation overlap and classification diagnostics.

mod confusion;
mod evaluate;

pub use confusion::*;
pub use evaluate::*;

use crate::segmentation::BinaryMask;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("mask dimensions differ: {a:?} vs {b:?}")]
    DimensionMismatch { a: (usize, usize), b: (usize, usize) },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("all weights are zero")]
    ZeroTotalWeight,
    #[error("missing predictions for {} case(s): {}", .0.len(), .0.join(", "))]
    MissingPredictions(Vec<String>),
    #[error("prediction for unknown case {0}")]
    UnknownCase(String),
}

/// Sørensen–Dice overlap `2|A∩B| / (|A|+|B|)`; two empty masks score 1.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64, MetricsError> {
    if a.dims() != b.dims() {
        return Err(MetricsError::DimensionMismatch {
            a: a.dims(),
            b: b.dims(),
        });
    }
    let (na, nb) = (a.count(), b.count());
    if na + nb == 0 {
        return Ok(1.0);
    }
    let both = a.bits().iter().zip(b.bits()).filter(|(x, y)| **x && **y).count();
    Ok(2.0 * both as f64 / (na + nb) as f64)
}
