use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use circa_core::imaging::ImagingError;
use circa_core::models::ModelError;
use circa_core::pipeline::{canonical_json, PipelineError, RejectionReason};
use serde::Serialize;

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub stage: Option<String>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            stage: None,
        }
    }

    pub fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", what)
    }

    pub fn unauthorized() -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or invalid bearer token")
    }

    pub fn unsupported_format(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "unsupported_format", message)
    }

    pub fn too_large(limit: usize) -> Self {
        Self::new(StatusCode::PAYLOAD_TOO_LARGE, "payload_too_large", format!("upload exceeds {limit} bytes"))
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }

    fn with_stage(mut self, stage: &str) -> Self {
        self.stage = Some(stage.to_string());
        self
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let msg = e.to_string();
        match e {
            PipelineError::Decode(ImagingError::UnsupportedFormat(_) | ImagingError::NonImageDicom(_)) => {
                Self::unsupported_format(msg).with_stage("decode")
            }
            PipelineError::Decode(_) => Self::new(StatusCode::BAD_REQUEST, "corrupt_stream", msg).with_stage("decode"),
            PipelineError::Backend {
                stage,
                source: ModelError::BackendUnavailable(_),
            } => Self::new(StatusCode::SERVICE_UNAVAILABLE, "backend_unavailable", msg).with_stage(stage),
            PipelineError::Backend { stage, .. } => {
                Self::new(StatusCode::BAD_GATEWAY, "inference_failure", msg).with_stage(stage)
            }
            PipelineError::Stage { stage, .. } => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "pipeline_failure", msg).with_stage(stage),
            _ => Self::internal(msg),
        }
    }
}

impl From<crate::ServiceError> for ApiError {
    fn from(e: crate::ServiceError) -> Self {
        Self::internal(e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        crate::app::json_response(self.status, canonical_json(&self))
    }
}

/// Machine code of a gate rejection.
pub fn rejection_code(r: RejectionReason) -> &'static str {
    match r {
        RejectionReason::NoLungFound => "no_lung_found",
        RejectionReason::TooSmall => "too_small",
        RejectionReason::LowQuality => "low_quality",
    }
}
