//! Chest X-ray triage engine.
//!
//! The crate is organised along the processing chain:
//!
//! * [`imaging`] – decoding, intensity standardization, CLAHE, resampling, patch tiling.
//! * [`segmentation`] – lung mask post-processing, quality scoring, cleaning gates, ROI construction.
//! * [`radiomics`] – discretization, first-order and texture features, Kruskal–Wallis ranking, scaling.
//! * [`models`] – PCA, 2D Gaussian mixtures, k-NN embedding, dense network, CART, inference backends.
//! * [`metrics`] – Dice and one-vs-rest diagnostics with subtype-weighted aggregation.
//! * [`pipeline`] – single-case processing and corpus workflows.

pub mod container;
pub mod imaging;
pub mod labels;
pub mod metrics;
pub mod models;
pub mod radiomics;
pub mod pipeline;
pub mod segmentation;

pub use imaging::RasterImage;
pub use labels::{decide_class, Class, ClassProbabilities, Subtype};
