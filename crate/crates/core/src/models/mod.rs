//! Classical models (PCA, 2D Gaussian mixtures, k-NN embedding, dense
//! network, CART) and the neural inference backend contract.

mod backend;
mod dense;
mod gmm;
mod knn;
mod pca;
mod tree;

pub use backend::*;
pub use dense::*;
pub use gmm::*;
pub use knn::*;
pub use pca::*;
pub use tree::*;

use crate::container::ContainerError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("too few points: need {needed}, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("degenerate matrix (zero total variance)")]
    DegenerateMatrix,
    #[error("empty training set")]
    EmptyTrainSet,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("corrupt model: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("inference failure: {0}")]
    InferenceFailure(String),
}
