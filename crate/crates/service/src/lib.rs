//! HTTP API over the triage pipeline: anonymous prediction, verified-case
//! submission, case and artifact retrieval, and health reporting.

pub mod app;
pub mod config;
pub mod error;
pub mod store;

pub use app::{router, serve, AppState};
pub use config::{AppConfig, ServiceSettings};
pub use error::ApiError;
pub use store::{CaseRecord, Store, Submitter};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("storage: {0}")]
    Storage(String),
    #[error(transparent)]
    Pipeline(#[from] circa_core::pipeline::PipelineError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}
