#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use circa_core::pipeline::synthetic::{fixture_spec, synthetic_png};
use circa_core::pipeline::{Backends, ModelBundle, Pipeline, PipelineConfig, SaliencyParams};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn bundle() -> Arc<ModelBundle> {
    let (b, _) = ModelBundle::load(&fixtures().join("demo-bundle")).expect("demo bundle fixture");
    Arc::new(b)
}

pub fn golden_config() -> PipelineConfig {
    PipelineConfig {
        saliency: Some(SaliencyParams::default()),
        ..PipelineConfig::default()
    }
}

pub fn mock_backends(cfg: &PipelineConfig) -> Backends {
    Backends::mock(cfg.canvas_size, cfg.roi.size, cfg.sr_patch)
}

pub fn pipeline_with(cfg: PipelineConfig, backends: Backends) -> Pipeline {
    Pipeline::new(cfg, bundle(), backends).unwrap()
}

pub fn fixture_image() -> Vec<u8> {
    std::fs::read(fixtures().join("chest.png")).unwrap_or_else(|_| synthetic_png(&fixture_spec()))
}
