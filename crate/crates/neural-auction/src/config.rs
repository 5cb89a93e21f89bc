//! Flat TOML config files with typed validation. Unknown keys are errors
//! and name the offending key.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;
use thiserror::Error;

use crate::data::{DataError, GeneratorConfig, MetricId, MetricWeight, ObjectiveSpec};
use crate::encoder::Pooling;
use crate::training::{TauKind, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    toml::from_str(&text)
        .map_err(|e| ConfigError::Parse { path: path.to_path_buf(), message: e.to_string() })
}

/// Load and validate a generator config; all keys are optional and default
/// to [`GeneratorConfig::default`].
pub fn load_generator_config(path: impl AsRef<Path>) -> Result<GeneratorConfig, ConfigError> {
    let cfg: GeneratorConfig = read_toml(path.as_ref())?;
    cfg.validate()?;
    Ok(cfg)
}

/// Training config file. Everything is optional except `[objective]`,
/// a table of metric-id => weight (e.g. `revenue = 0.5`, `ctr = 0.5`).
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    objective: BTreeMap<String, f64>,
    seed: Option<u64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    beta1: Option<f64>,
    beta2: Option<f64>,
    epsilon: Option<f64>,
    loss_mix: Option<f64>,
    holdout_fraction: Option<f64>,
    eval_sample: Option<usize>,
    #[serde(default)]
    tau: TauFile,
    #[serde(default)]
    model: ModelFile,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct TauFile {
    kind: Option<String>,
    start: Option<f64>,
    end: Option<f64>,
    steps: Option<usize>,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    hidden1: Option<usize>,
    hidden2: Option<usize>,
    embedding: Option<usize>,
    groups: Option<usize>,
    pieces: Option<usize>,
    pooling: Option<String>,
}

fn objective_from_map(map: &BTreeMap<String, f64>) -> Result<ObjectiveSpec, DataError> {
    let mut terms = Vec::with_capacity(map.len());
    for (key, &weight) in map {
        terms.push(MetricWeight { metric: MetricId::from_str(key)?, weight });
    }
    ObjectiveSpec::new(terms)
}

pub fn load_train_config(path: impl AsRef<Path>) -> Result<TrainConfig, ConfigError> {
    let path = path.as_ref();
    let file: TrainFile = read_toml(path)?;
    let mut cfg = TrainConfig::new(objective_from_map(&file.objective)?);

    macro_rules! take {
        ($($field:ident),*) => {
            $(if let Some(v) = file.$field { cfg.$field = v; })*
        };
    }
    take!(seed, epochs, batch_size, learning_rate, beta1, beta2, epsilon, loss_mix, holdout_fraction, eval_sample);

    if let Some(kind) = &file.tau.kind {
        cfg.tau.kind = match kind.as_str() {
            "exponential" => TauKind::Exponential,
            "polynomial" => TauKind::Polynomial,
            other => {
                return Err(ConfigError::Parse {
                    path: path.to_path_buf(),
                    message: format!("unknown tau kind `{other}` (expected exponential|polynomial)"),
                })
            }
        };
    }
    if let Some(v) = file.tau.start {
        cfg.tau.start = v;
    }
    if let Some(v) = file.tau.end {
        cfg.tau.end = v;
    }
    if let Some(v) = file.tau.steps {
        cfg.tau.steps = v;
    }

    if let Some(v) = file.model.hidden1 {
        cfg.hidden1 = v;
    }
    if let Some(v) = file.model.hidden2 {
        cfg.hidden2 = v;
    }
    if let Some(v) = file.model.embedding {
        cfg.embedding = v;
    }
    if let Some(v) = file.model.groups {
        cfg.groups = v;
    }
    if let Some(v) = file.model.pieces {
        cfg.pieces = v;
    }
    if let Some(pooling) = &file.model.pooling {
        cfg.pooling = match pooling.as_str() {
            "mean" => Pooling::Mean,
            "max" => Pooling::Max,
            other => {
                return Err(ConfigError::Parse {
                    path: path.to_path_buf(),
                    message: format!("unknown pooling `{other}` (expected mean|max)"),
                })
            }
        };
    }

    cfg.validate()?;
    Ok(cfg)
}
