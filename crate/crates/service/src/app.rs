use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::multipart::MultipartRejection;
use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::Response;
use axum::routing::{get, post};
use axum::Router;
use chrono::Utc;
use circa_core::imaging::ImageFormat;
use circa_core::labels::Class;
use circa_core::pipeline::{canonical_json, process_case, BundleManifest, ModelBundle, Pipeline, PipelineResult};
use serde::Serialize;
use tokio::sync::Semaphore;
use tower_http::services::ServeDir;
use uuid::Uuid;

use crate::error::rejection_code;
use crate::store::{BlobRef, CaseRecord, Store, Submitter};
use crate::{ApiError, AppConfig, ServiceError};

pub const ARTIFACT_KINDS: [&str; 3] = ["mask", "roi", "saliency"];

#[derive(Clone)]
pub struct AppState {
    pub pipeline: Arc<Pipeline>,
    pub store: Arc<Store>,
    pub bundle_manifest: Option<Arc<BundleManifest>>,
    tokens: Arc<BTreeMap<String, String>>,
    permits: Arc<Semaphore>,
    workers: usize,
    max_upload: usize,
    static_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(
        pipeline: Pipeline,
        store: Store,
        bundle_manifest: Option<BundleManifest>,
        settings: &crate::ServiceSettings,
    ) -> Self {
        Self {
            pipeline: Arc::new(pipeline),
            store: Arc::new(store),
            bundle_manifest: bundle_manifest.map(Arc::new),
            tokens: Arc::new(settings.tokens.clone()),
            permits: Arc::new(Semaphore::new(settings.workers)),
            workers: settings.workers,
            max_upload: settings.max_upload_bytes,
            static_dir: settings.static_dir.clone(),
        }
    }

    pub fn from_config(cfg: &AppConfig) -> Result<Self, ServiceError> {
        let dir = cfg
            .service
            .bundle_dir
            .as_ref()
            .ok_or_else(|| ServiceError::Config("service.bundle_dir is not set".into()))?;
        let (bundle, manifest) = ModelBundle::load(dir)?;
        let p = &cfg.pipeline;
        let backends = cfg.backends.build(p.canvas_size, p.roi.size, p.sr_patch);
        let pipeline = Pipeline::new(p.clone(), Arc::new(bundle), backends)?;
        let store = Store::open(&cfg.service.data_dir)?;
        Ok(Self::new(pipeline, store, Some(manifest), &cfg.service))
    }

    fn user_for(&self, headers: &HeaderMap) -> Option<String> {
        let value = headers.get(header::AUTHORIZATION)?.to_str().ok()?;
        let token = value.strip_prefix("Bearer ")?.trim();
        self.tokens.get(token).cloned()
    }
}

pub(crate) fn json_response(status: StatusCode, body: String) -> Response {
    Response::builder()
        .status(status)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body))
        .expect("static headers are valid")
}

struct Upload {
    image: Vec<u8>,
    hint: Option<ImageFormat>,
    fields: BTreeMap<String, String>,
}

fn multipart_error(e: axum::extract::multipart::MultipartError, limit: usize) -> ApiError {
    if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
        ApiError::too_large(limit)
    } else {
        ApiError::bad_request(format!("malformed multipart body: {}", e.body_text()))
    }
}

async fn read_upload(mp: Result<Multipart, MultipartRejection>, limit: usize) -> Result<Upload, ApiError> {
    let mut mp = mp.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let mut image = None;
    let mut hint = None;
    let mut fields = BTreeMap::new();
    while let Some(field) = mp.next_field().await.map_err(|e| multipart_error(e, limit))? {
        let name = field.name().unwrap_or_default().to_string();
        if name == "image" || name == "file" {
            let ct = field.content_type().map(str::to_string);
            hint = match ct.as_deref() {
                None | Some("application/octet-stream") => None,
                Some(ct) => Some(
                    ImageFormat::from_mime(ct)
                        .ok_or_else(|| ApiError::unsupported_format(format!("content type {ct} is not an accepted image type")))?,
                ),
            };
            image = Some(field.bytes().await.map_err(|e| multipart_error(e, limit))?.to_vec());
        } else {
            let text = field.text().await.map_err(|e| multipart_error(e, limit))?;
            fields.insert(name, text);
        }
    }
    if let Some(f) = fields.get("format") {
        hint = Some(
            ImageFormat::from_extension(f)
                .or_else(|| ImageFormat::from_mime(f))
                .ok_or_else(|| ApiError::unsupported_format(format!("format hint {f:?} is not accepted")))?,
        );
    }
    let image = image.ok_or_else(|| ApiError::bad_request("multipart field \"image\" is required"))?;
    Ok(Upload { image, hint, fields })
}

fn artifact_url(id: &Uuid, kind: &str) -> String {
    format!("/api/v1/cases/{id}/artifacts/{kind}")
}

#[derive(Serialize)]
struct CaseResponse<'a> {
    id: Uuid,
    submitted_at: String,
    status: &'static str,
    code: Option<&'static str>,
    verified_label: Option<Class>,
    result: &'a PipelineResult,
    artifacts: BTreeMap<&'a str, String>,
}

fn case_body(rec: &CaseRecord) -> String {
    let rejection = rec.result.rejection.as_ref();
    canonical_json(&CaseResponse {
        id: rec.id,
        submitted_at: rec.submitted_at.to_rfc3339(),
        status: if rejection.is_some() { "rejected" } else { "accepted" },
        code: rejection.map(|r| rejection_code(r.reason)),
        verified_label: rec.verified_label,
        result: &rec.result,
        artifacts: rec.artifacts.keys().map(|k| (k.as_str(), artifact_url(&rec.id, k))).collect(),
    })
}

async fn run_case(
    st: &AppState,
    upload: Upload,
    submitter: Submitter,
    label: Option<Class>,
    notes: Option<String>,
) -> Result<Arc<CaseRecord>, ApiError> {
    let _permit = st.permits.clone().acquire_owned().await.map_err(|e| ApiError::internal(e.to_string()))?;
    let pipeline = st.pipeline.clone();
    let store = st.store.clone();
    let task = tokio::task::spawn_blocking(move || -> Result<Arc<CaseRecord>, ApiError> {
        let outcome = process_case(&upload.image, upload.hint, &pipeline)?;
        let format = outcome.result.input.format;
        let mime = match format {
            ImageFormat::Png => "image/png",
            ImageFormat::Jpeg => "image/jpeg",
            ImageFormat::Dicom => "application/dicom",
        };
        let image = store.put_blob(&upload.image, mime)?;
        let mut artifacts = BTreeMap::new();
        for (kind, png) in [("mask", outcome.mask_png()), ("roi", outcome.roi_png()), ("saliency", outcome.saliency_png())] {
            if let Some(png) = png {
                artifacts.insert(kind.to_string(), store.put_blob(&png, "image/png")?);
            }
        }
        let rec = CaseRecord {
            id: Uuid::new_v4(),
            submitted_at: Utc::now(),
            image,
            format,
            result: outcome.result,
            submitter,
            verified_label: label,
            notes,
            artifacts,
        };
        Ok(store.append(rec)?)
    });
    task.await.map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

async fn predict(State(st): State<AppState>, mp: Result<Multipart, MultipartRejection>) -> Result<Response, ApiError> {
    let upload = read_upload(mp, st.max_upload).await?;
    let rec = run_case(&st, upload, Submitter::Anonymous, None, None).await?;
    Ok(json_response(StatusCode::OK, case_body(&rec)))
}

async fn submit_verified(
    State(st): State<AppState>,
    headers: HeaderMap,
    mp: Result<Multipart, MultipartRejection>,
) -> Result<Response, ApiError> {
    let user = st.user_for(&headers).ok_or_else(ApiError::unauthorized)?;
    let mut upload = read_upload(mp, st.max_upload).await?;
    let raw = upload.fields.remove("label").unwrap_or_default();
    let label: Class = raw.parse().map_err(|_| {
        ApiError::new(
            StatusCode::BAD_REQUEST,
            "invalid_label",
            format!("label {raw:?} must be one of normal, pneumonia, covid"),
        )
    })?;
    let notes = upload.fields.remove("notes").filter(|n| !n.is_empty());
    let rec = run_case(&st, upload, Submitter::Registered { user }, Some(label), notes).await?;
    Ok(json_response(StatusCode::CREATED, case_body(&rec)))
}

async fn export_verified(State(st): State<AppState>, headers: HeaderMap) -> Result<Response, ApiError> {
    st.user_for(&headers).ok_or_else(ApiError::unauthorized)?;
    let body = st.store.export_verified().to_jsonl();
    Ok(Response::builder()
        .header(header::CONTENT_TYPE, "application/x-ndjson")
        .body(Body::from(body))
        .expect("static headers are valid"))
}

fn lookup(st: &AppState, id: &str) -> Result<Arc<CaseRecord>, ApiError> {
    Uuid::parse_str(id)
        .ok()
        .and_then(|id| st.store.get(&id))
        .ok_or_else(|| ApiError::not_found(format!("no case {id}")))
}

async fn get_case(State(st): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let rec = lookup(&st, &id)?;
    Ok(json_response(StatusCode::OK, canonical_json(&*rec)))
}

async fn get_artifact(State(st): State<AppState>, Path((id, kind)): Path<(String, String)>) -> Result<Response, ApiError> {
    let rec = lookup(&st, &id)?;
    if !ARTIFACT_KINDS.contains(&kind.as_str()) {
        return Err(ApiError::not_found(format!("unknown artifact kind {kind}")));
    }
    let blob: BlobRef = rec
        .artifacts
        .get(&kind)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("case {id} has no {kind} artifact")))?;
    let store = st.store.clone();
    let bytes = tokio::task::spawn_blocking(move || store.get_blob(&blob))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Response::builder()
        .header(header::CONTENT_TYPE, "image/png")
        .body(Body::from(bytes))
        .expect("static headers are valid"))
}

#[derive(Serialize)]
struct BackendHealth {
    slot: &'static str,
    available: bool,
    id: Option<String>,
    kind: Option<String>,
    concurrency: Option<String>,
    detail: Option<String>,
}

#[derive(Serialize)]
struct Health<'a> {
    status: &'static str,
    version: &'static str,
    workers: usize,
    cases: usize,
    degraded: Vec<&'static str>,
    backends: Vec<BackendHealth>,
    bundle: Option<&'a BundleManifest>,
}

fn health_report(st: &AppState) -> Health<'_> {
    let mut degraded = Vec::new();
    let backends = st
        .pipeline
        .backends
        .slots()
        .into_iter()
        .map(|(slot, handle)| {
            let probe = handle.map(|h| h.probe());
            let available = matches!(probe, Some(Ok(())));
            // super-resolution has a built-in fallback
            if !available && slot != "super_resolution" {
                degraded.push(slot);
            }
            let d = handle.map(|h| h.descriptor());
            BackendHealth {
                slot,
                available,
                id: d.map(|d| d.id.clone()),
                kind: d.map(|d| format!("{:?}", d.kind).to_lowercase()),
                concurrency: d.map(|d| format!("{:?}", d.concurrency).to_lowercase()),
                detail: match probe {
                    None if slot == "super_resolution" => Some("not configured; bilinear fallback".into()),
                    None => Some("not configured".into()),
                    Some(Err(e)) => Some(e),
                    Some(Ok(())) => None,
                },
            }
        })
        .collect();
    Health {
        status: if degraded.is_empty() { "ok" } else { "degraded" },
        version: env!("CARGO_PKG_VERSION"),
        workers: st.workers,
        cases: st.store.len(),
        degraded,
        backends,
        bundle: st.bundle_manifest.as_deref(),
    }
}

async fn health(State(st): State<AppState>) -> Response {
    json_response(StatusCode::OK, canonical_json(&health_report(&st)))
}

async fn api_not_found() -> ApiError {
    ApiError::not_found("no such endpoint")
}

pub fn router(state: AppState) -> Router {
    let limit = state.max_upload;
    let static_dir = state.static_dir.clone();
    let api = Router::new()
        .route("/predict", post(predict))
        .route("/verified", post(submit_verified))
        .route("/verified/export", get(export_verified))
        .route("/cases/{id}", get(get_case))
        .route("/cases/{id}/artifacts/{kind}", get(get_artifact))
        .route("/health", get(health))
        .fallback(api_not_found);
    let app = Router::new()
        .nest("/api/v1", api)
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state);
    match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    }
}

/// Binds `service.bind` and serves until Ctrl-C.
pub async fn serve(cfg: AppConfig) -> Result<(), ServiceError> {
    let state = AppState::from_config(&cfg)?;
    let listener = tokio::net::TcpListener::bind(&cfg.service.bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
