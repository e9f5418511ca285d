use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_LEAKAGE_THETA: f64 = 0.95;
pub const DEFAULT_MIN_CLUSTER_SIZE: usize = 20;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("{key} = {value} outside {range}")]
    Range { key: &'static str, value: f64, range: &'static str },
    #[error("{key}: path {path} does not exist")]
    MissingPath { key: &'static str, path: String },
    #[error("{0} is required (flag or config)")]
    Required(&'static str),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub embeddings: Option<PathBuf>,
    pub metadata: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub query_labels: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub recognizers: Option<PathBuf>,
    pub images: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub dedup: Option<PathBuf>,
    pub clusters: Option<PathBuf>,
    pub entities: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub log: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub tau: Option<f64>,
    pub dedup_theta: Option<f64>,
    pub leakage_theta: Option<f64>,
    pub pii_score_threshold: Option<f64>,
    pub k_sd: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Commands {
    pub ocr: Option<String>,
    pub correct: Option<String>,
    pub upscale: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Clustering {
    pub min_cluster_size: Option<usize>,
    pub min_samples: Option<usize>,
}

/// Pipeline settings from the config file. Everything is optional; flags override.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub paths: Paths,
    pub thresholds: Thresholds,
    pub commands: Commands,
    pub cluster: Clustering,
}

fn unit_range(key: &'static str, v: Option<f64>) -> Result<(), ConfigError> {
    match v {
        Some(x) if !(0.0..=1.0).contains(&x) => Err(ConfigError::Range {
            key,
            value: x,
            range: "[0, 1]",
        }),
        _ => Ok(()),
    }
}

/// Threshold range check shared by config values and flags.
pub fn check_unit(key: &'static str, v: f64) -> Result<f64, ConfigError> {
    unit_range(key, Some(v)).map(|_| v)
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: shown.clone(),
            source,
        })?;
        let mut cfg: PipelineConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: shown,
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn path_fields(&mut self) -> [(&'static str, &mut Option<PathBuf>); 13] {
        let p = &mut self.paths;
        [
            ("paths.embeddings", &mut p.embeddings),
            ("paths.metadata", &mut p.metadata),
            ("paths.queries", &mut p.queries),
            ("paths.query_labels", &mut p.query_labels),
            ("paths.model", &mut p.model),
            ("paths.recognizers", &mut p.recognizers),
            ("paths.images", &mut p.images),
            ("paths.detections", &mut p.detections),
            ("paths.dedup", &mut p.dedup),
            ("paths.clusters", &mut p.clusters),
            ("paths.entities", &mut p.entities),
            ("paths.truth", &mut p.truth),
            ("paths.log", &mut p.log),
        ]
    }

    /// Relative paths are taken relative to the config file's directory.
    fn resolve_paths(&mut self, base: &Path) {
        for (_, p) in self.path_fields() {
            if let Some(rel) = p.as_ref().filter(|p| p.is_relative()) {
                *p = Some(base.join(rel));
            }
        }
    }

    /// Thresholds in range; every input path present. Outputs of later stages
    /// (`log`, which is created on demand) are exempt.
    pub fn validate(&mut self) -> Result<(), ConfigError> {
        let t = &self.thresholds;
        unit_range("thresholds.tau", t.tau)?;
        unit_range("thresholds.dedup_theta", t.dedup_theta)?;
        unit_range("thresholds.leakage_theta", t.leakage_theta)?;
        unit_range("thresholds.pii_score_threshold", t.pii_score_threshold)?;
        if let Some(k) = t.k_sd.filter(|k| !(k.is_finite() && *k > 0.0)) {
            return Err(ConfigError::Range {
                key: "thresholds.k_sd",
                value: k,
                range: "(0, inf)",
            });
        }
        if self.workers == Some(0) {
            return Err(ConfigError::Invalid("workers must be at least 1".into()));
        }
        if self.cluster.min_cluster_size.is_some_and(|m| m < 2) {
            return Err(ConfigError::Invalid("cluster.min_cluster_size must be at least 2".into()));
        }
        for (key, p) in self.path_fields() {
            if key == "paths.log" {
                continue;
            }
            if let Some(p) = p.as_ref().filter(|p| !p.exists()) {
                return Err(ConfigError::MissingPath {
                    key,
                    path: p.display().to_string(),
                });
            }
        }
        Ok(())
    }
}

/// Flag value, else config value, else error.
pub fn pick_path(flag: &Option<PathBuf>, cfg: &Option<PathBuf>, name: &'static str) -> Result<PathBuf, ConfigError> {
    flag.clone()
        .or_else(|| cfg.clone())
        .ok_or(ConfigError::Required(name))
}
