//! Run manifests: the resolved configuration written next to every output so
//! the run can be repeated bit-exactly with `--config <manifest>`.

use std::fs;
use std::path::{Path, PathBuf};

use oscsync_core::readout::MapMetadata;
use oscsync_core::{build_paper_network, DetectorSpec};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::config::{Command, RunConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: manifest schema version {found}, expected {SCHEMA_VERSION}")]
    Version { path: PathBuf, found: u64 },
    #[error("manifest describes a {0} run, not a map")]
    NotAMap(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: Command,
    pub config: RunConfig,
    pub master_seed: u64,
    pub code_version: String,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(command: Command, config: RunConfig, outputs: Vec<PathBuf>) -> Self {
        RunManifest {
            schema_version: SCHEMA_VERSION,
            command,
            master_seed: config.seed,
            config,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            outputs,
        }
    }

    /// `dir/name.csv` → `dir/name.manifest.json`.
    pub fn path_for(output: &Path) -> PathBuf {
        let stem = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        output.with_file_name(format!("{stem}.manifest.json"))
    }

    pub fn write(&self, path: &Path) -> Result<(), ManifestError> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text).map_err(|source| ManifestError::Io { path: path.into(), source })
    }

    pub fn read(path: &Path) -> Result<Self, ManifestError> {
        let value = read_json(path)?;
        check_version(path, &value)?;
        serde_json::from_value(value).map_err(|source| ManifestError::Json { path: path.into(), source })
    }

    /// Metadata of the map a `map` run wrote.
    pub fn map_metadata(&self) -> Result<MapMetadata, ManifestError> {
        if self.command != Command::Map {
            return Err(ManifestError::NotAMap(self.command.name().into()));
        }
        let c = &self.config;
        Ok(MapMetadata {
            detector: detector_for(c),
            network: build_paper_network(&c.topology).map_err(|e| ManifestError::Config(e.to_string()))?,
            protocol: c.protocol,
            grid: c.grid,
            master_seed: c.seed,
        })
    }
}

/// Detector of a `map` run: its scheme with the configured threshold.
pub fn detector_for(config: &RunConfig) -> DetectorSpec {
    config.thresholds.detector(config.detector)
}

fn read_json(path: &Path) -> Result<Value, ManifestError> {
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io { path: path.into(), source })?;
    serde_json::from_str(&text).map_err(|source| ManifestError::Json { path: path.into(), source })
}

fn check_version(path: &Path, value: &Value) -> Result<(), ManifestError> {
    match value.get("schema_version").and_then(Value::as_u64) {
        Some(v) if v == SCHEMA_VERSION as u64 => Ok(()),
        Some(found) => Err(ManifestError::Version { path: path.into(), found }),
        None => Err(ManifestError::Version { path: path.into(), found: 0 }),
    }
}

/// Configuration overlay from a `--config` file: either a (partial)
/// [`RunConfig`] object or a manifest, whose `config` is used.
pub fn load_config_overlay(path: &Path) -> Result<Value, ManifestError> {
    let mut value = read_json(path)?;
    if value.get("schema_version").is_some() && value.get("config").is_some() {
        check_version(path, &value)?;
        return Ok(value["config"].take());
    }
    Ok(value)
}
