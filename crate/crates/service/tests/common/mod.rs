#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use circa_core::pipeline::{Backends, ModelBundle, Pipeline, PipelineConfig, SaliencyParams};
use circa_service::{router, AppState, ServiceSettings, Store};
use http_body_util::BodyExt;
use tower::ServiceExt;

pub const TOKEN: &str = "test-token";

pub fn core_fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

pub fn fixture_png() -> Vec<u8> {
    std::fs::read(core_fixtures().join("chest.png")).unwrap()
}

pub fn config() -> PipelineConfig {
    PipelineConfig {
        saliency: Some(SaliencyParams::default()),
        ..PipelineConfig::default()
    }
}

pub fn mocks() -> Backends {
    let c = config();
    Backends::mock(c.canvas_size, c.roi.size, c.sr_patch)
}

pub fn settings(data: &std::path::Path) -> ServiceSettings {
    let mut s = ServiceSettings {
        data_dir: data.to_path_buf(),
        ..ServiceSettings::default()
    };
    s.tokens.insert(TOKEN.into(), "radiologist-1".into());
    s
}

pub fn app_with(data: &std::path::Path, backends: Backends, settings: ServiceSettings) -> Router {
    let (bundle, manifest) = ModelBundle::load(&core_fixtures().join("demo-bundle")).unwrap();
    let pipeline = Pipeline::new(config(), Arc::new(bundle), backends).unwrap();
    let store = Store::open(data).unwrap();
    router(AppState::new(pipeline, store, Some(manifest), &settings))
}

pub fn app(data: &std::path::Path) -> Router {
    app_with(data, mocks(), settings(data))
}

pub struct Part<'a> {
    pub name: &'a str,
    pub file: Option<(&'a str, &'a str)>,
    pub data: &'a [u8],
}

pub fn image_part<'a>(data: &'a [u8], content_type: &'a str) -> Part<'a> {
    Part {
        name: "image",
        file: Some(("upload", content_type)),
        data,
    }
}

pub fn text_part<'a>(name: &'a str, value: &'a str) -> Part<'a> {
    Part {
        name,
        file: None,
        data: value.as_bytes(),
    }
}

const BOUNDARY: &str = "circa-test-boundary-7d1f";

pub fn multipart(uri: &str, parts: &[Part], token: Option<&str>) -> Request<Body> {
    let mut body = Vec::new();
    for p in parts {
        body.extend_from_slice(format!("--{BOUNDARY}\r\n").as_bytes());
        match p.file {
            Some((filename, ct)) => body.extend_from_slice(
                format!("Content-Disposition: form-data; name=\"{}\"; filename=\"{filename}\"\r\nContent-Type: {ct}\r\n\r\n", p.name)
                    .as_bytes(),
            ),
            None => body.extend_from_slice(format!("Content-Disposition: form-data; name=\"{}\"\r\n\r\n", p.name).as_bytes()),
        }
        body.extend_from_slice(p.data);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    let mut req = Request::post(uri)
        .header("content-type", format!("multipart/form-data; boundary={BOUNDARY}"))
        .header("content-length", body.len());
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    req.body(Body::from(body)).unwrap()
}

pub fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

pub async fn send(app: &Router, req: Request<Body>) -> (StatusCode, String, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let ct = resp
        .headers()
        .get("content-type")
        .map(|v| v.to_str().unwrap().to_string())
        .unwrap_or_default();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, ct, body)
}

pub fn json(body: &[u8]) -> serde_json::Value {
    serde_json::from_slice(body).unwrap()
}

/// Response body with the per-request fields (id, timestamp, timings,
/// id-bearing URLs) removed, in canonical form.
pub fn golden_body(body: &[u8]) -> String {
    let mut v = json(body);
    let id = v["id"].as_str().unwrap().to_string();
    let o = v.as_object_mut().unwrap();
    o.remove("id");
    o.remove("submitted_at");
    o["result"].as_object_mut().unwrap().remove("timings");
    let text = circa_core::pipeline::canonical_json(&v);
    text.replace(&id, "{id}")
}
