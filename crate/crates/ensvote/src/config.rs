//! TOML configuration files and layering with command-line overrides.
//!
//! A file holds flat engine keys (`lambda = 0.5`, `weights = [0, 0, 0.5, 0.5]`),
//! optionally `runner` and `jobs`, and any number of `[[providers]]` tables.
//! Precedence is command line, then file, then built-in defaults.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use ensvote_core::model::normalize_key;
use ensvote_core::{validate_config, ConfigError, EnsembleConfig};
use thiserror::Error;
use toml::Value;

use crate::acquire::ProviderSpec;
use crate::runner::RunnerCommand;

#[derive(Debug, Error)]
pub enum ConfigFileError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid TOML: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("`{key}`: {message}")]
    BadValue { key: String, message: String },
    #[error("duplicate provider name `{0}`")]
    DuplicateProvider(String),
    #[error("provider `{name}`: invalid endpoint URL `{url}`")]
    BadEndpoint { name: String, url: String },
    #[error(transparent)]
    Engine(#[from] ConfigError),
}

/// Parsed contents of a configuration file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FileConfig {
    /// Engine keys as strings, ready for [`validate_config`].
    pub engine: BTreeMap<String, String>,
    pub runner: Option<RunnerCommand>,
    pub jobs: Option<usize>,
    pub providers: Vec<ProviderSpec>,
}

fn scalar(key: &str, value: &Value) -> Result<String, ConfigFileError> {
    let bad = |message: &str| ConfigFileError::BadValue { key: key.to_string(), message: message.to_string() };
    match value {
        Value::String(s) => Ok(s.clone()),
        Value::Integer(i) => Ok(i.to_string()),
        Value::Float(f) => Ok(f.to_string()),
        Value::Boolean(b) => Ok(b.to_string()),
        Value::Array(items) => items
            .iter()
            .map(|v| match v {
                Value::Integer(i) => Ok(i.to_string()),
                Value::Float(f) => Ok(f.to_string()),
                _ => Err(bad("arrays must hold numbers")),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(|parts| parts.join(",")),
        _ => Err(bad("expected a scalar or an array of numbers")),
    }
}

/// Parses configuration text. Engine keys are checked by building a config.
pub fn parse_config(text: &str) -> Result<FileConfig, ConfigFileError> {
    let table: toml::Table = text.parse()?;
    let mut out = FileConfig::default();
    for (key, value) in table {
        match normalize_key(&key).as_str() {
            "providers" => {
                out.providers = value.try_into().map_err(|e: toml::de::Error| ConfigFileError::BadValue {
                    key: "providers".into(),
                    message: e.to_string(),
                })?;
            }
            "runner" => {
                let line = scalar(&key, &value)?;
                out.runner = Some(RunnerCommand::parse(&line).ok_or_else(|| ConfigFileError::BadValue {
                    key,
                    message: "empty command".into(),
                })?);
            }
            "jobs" => {
                let jobs = value.as_integer().filter(|&j| j > 0).ok_or_else(|| ConfigFileError::BadValue {
                    key: key.clone(),
                    message: "expected a positive integer".into(),
                })?;
                out.jobs = Some(jobs as usize);
            }
            normalized => {
                out.engine.insert(normalized.to_string(), scalar(&key, &value)?);
            }
        }
    }
    validate_providers(&out.providers)?;
    validate_config(&out.engine)?;
    Ok(out)
}

pub fn load_config(path: &Path) -> Result<FileConfig, ConfigFileError> {
    let text =
        fs::read_to_string(path).map_err(|source| ConfigFileError::Io { path: path.to_path_buf(), source })?;
    parse_config(&text)
}

fn validate_providers(providers: &[ProviderSpec]) -> Result<(), ConfigFileError> {
    let mut names = BTreeSet::new();
    for p in providers {
        if !names.insert(p.name.as_str()) {
            return Err(ConfigFileError::DuplicateProvider(p.name.clone()));
        }
        let url = reqwest::Url::parse(&p.endpoint_url).ok().filter(|u| matches!(u.scheme(), "http" | "https"));
        if url.is_none() {
            return Err(ConfigFileError::BadEndpoint { name: p.name.clone(), url: p.endpoint_url.clone() });
        }
    }
    Ok(())
}

const COMPONENT_KEYS: &[&str] = &["ngram_weight", "weighted_ngram_weight", "token_weight", "syntax_weight", "dataflow_weight"];

/// Layers `overrides` on top of `file` and validates the result. A weight
/// vector on one layer replaces individual component weights on the other.
pub fn merge_engine(
    file: &BTreeMap<String, String>,
    overrides: &BTreeMap<String, String>,
) -> Result<EnsembleConfig, ConfigError> {
    let mut merged: BTreeMap<String, String> = file.iter().map(|(k, v)| (normalize_key(k), v.clone())).collect();
    let overrides: BTreeMap<String, String> = overrides.iter().map(|(k, v)| (normalize_key(k), v.clone())).collect();
    if overrides.contains_key("weights") {
        merged.retain(|k, _| !COMPONENT_KEYS.contains(&k.as_str()));
    }
    if overrides.keys().any(|k| COMPONENT_KEYS.contains(&k.as_str())) {
        merged.remove("weights");
    }
    merged.extend(overrides);
    validate_config(&merged)
}
