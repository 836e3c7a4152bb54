//! Run configuration file (JSON). Every section and key is optional and
//! defaults to the published training setup; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{ArchitectureConfig, WINDOW};
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Dataset root holding `manifest.json`.
    pub dataset: Option<PathBuf>,
    pub target_hz: f64,
    pub window: usize,
    /// Random windows drawn per training clip; `None` takes every start.
    pub windows_per_clip: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            target_hz: 13.0,
            window: WINDOW,
            windows_per_clip: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub weights: PathBuf,
    pub epoch_log: PathBuf,
    pub report: PathBuf,
    pub baseline: Option<PathBuf>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            weights: "weights.p3dw".into(),
            epoch_log: "epochs.csv".into(),
            report: "report.csv".into(),
            baseline: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub architecture: ArchitectureConfig,
    pub training: TrainConfig,
    pub data: DataConfig,
    pub inference: OutputConfig,
}

impl RunConfig {
    /// Parse and validate. Errors carry the offending key path and the
    /// line/column of the failure.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            Error::Config(format!(
                "line {} column {}, key `{path}`: {inner}",
                inner.line(),
                inner.column()
            ))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("reading {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config is serializable")
    }

    pub fn validate(&self) -> Result<()> {
        self.architecture.validate()?;
        self.training.validate()?;
        if self.data.window != WINDOW {
            return Err(Error::Config(format!(
                "data.window must be {WINDOW} (the network consumes {WINDOW}-frame windows), got {}",
                self.data.window
            )));
        }
        if !(self.data.target_hz.is_finite() && self.data.target_hz > 0.0) {
            return Err(Error::Config(format!("data.target_hz must be positive, got {}", self.data.target_hz)));
        }
        if self.data.windows_per_clip == Some(0) {
            return Err(Error::Config("data.windows_per_clip must be at least 1".into()));
        }
        Ok(())
    }
}
