use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use circa_core::pipeline::{BackendsConfig, PipelineConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::ServiceError;

pub const ENV_PREFIX: &str = "CIRCA_";
pub const DEFAULT_MAX_UPLOAD: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceSettings {
    pub bind: String,
    /// Blob store and case index.
    pub data_dir: PathBuf,
    pub bundle_dir: Option<PathBuf>,
    pub max_upload_bytes: usize,
    /// Concurrent pipeline runs.
    pub workers: usize,
    /// Bearer token → registered user id.
    pub tokens: BTreeMap<String, String>,
    /// Built web UI served at `/`.
    pub static_dir: Option<PathBuf>,
}

impl Default for ServiceSettings {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("circa-data"),
            bundle_dir: None,
            max_upload_bytes: DEFAULT_MAX_UPLOAD,
            workers: 8,
            tokens: BTreeMap::new(),
            static_dir: None,
        }
    }
}

/// The shared configuration file: `[service]`, `[pipeline]`, `[backends]`
/// and `[train]` (read by the command-line training tools only).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub service: ServiceSettings,
    pub pipeline: PipelineConfig,
    pub backends: BackendsConfig,
    pub train: TrainConfig,
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl ServiceSettings {
    /// Applies `CIRCA_*` variables. `CIRCA_TOKENS` is `token:user,token:user`.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<(), ServiceError> {
        let bad = |k: &str, v: &str| ServiceError::Config(format!("{ENV_PREFIX}{k}={v:?} is invalid"));
        for (key, value) in vars {
            let Some(k) = key.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            match k {
                "BIND" => self.bind = value,
                "DATA_DIR" => self.data_dir = value.into(),
                "BUNDLE_DIR" => self.bundle_dir = Some(value.into()),
                "STATIC_DIR" => self.static_dir = Some(value.into()),
                "MAX_UPLOAD_BYTES" => self.max_upload_bytes = value.parse().map_err(|_| bad(k, &value))?,
                "WORKERS" => self.workers = value.parse().map_err(|_| bad(k, &value))?,
                "TOKENS" => {
                    self.tokens = value
                        .split(',')
                        .filter(|s| !s.trim().is_empty())
                        .map(|pair| {
                            pair.split_once(':')
                                .map(|(t, u)| (t.trim().to_string(), u.trim().to_string()))
                                .ok_or_else(|| bad(k, &value))
                        })
                        .collect::<Result<_, _>>()?;
                }
                _ => {}
            }
        }
        Ok(())
    }
}

impl AppConfig {
    /// Defaults, then environment, then the file; command-line flags are
    /// applied by the caller on top.
    pub fn load(
        file: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, ServiceError> {
        let mut cfg = AppConfig::default();
        cfg.service.apply_env(env)?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
            cfg = cfg.overlay(&text)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn overlay(&self, toml_text: &str) -> Result<Self, ServiceError> {
        let over: toml::Value = toml::from_str(toml_text).map_err(|e| ServiceError::Config(e.to_string()))?;
        let mut base = toml::Value::try_from(self).map_err(|e| ServiceError::Config(e.to_string()))?;
        merge(&mut base, over);
        base.try_into().map_err(|e: toml::de::Error| ServiceError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        self.pipeline.validate().map_err(|e| ServiceError::Config(e.to_string()))?;
        if self.service.workers == 0 {
            return Err(ServiceError::Config("service.workers must be at least 1".into()));
        }
        if self.service.max_upload_bytes == 0 {
            return Err(ServiceError::Config("service.max_upload_bytes must be positive".into()));
        }
        Ok(())
    }
}
