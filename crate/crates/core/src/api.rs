//! Request and response bodies of the HTTP service. Paths are interpreted on
//! the server's filesystem.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::datapipe::synth::{SynthOptions, SynthSummary, SyntheticSceneSpec};
use crate::error::{Error, ErrorKind};
use crate::inference::Evaluation;
use crate::pipeline::{EvalRequest, PredictSummary, TrainSummary};
use crate::training::EpochReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRequest {
    pub out: PathBuf,
    pub options: SynthOptions,
    #[serde(default)]
    pub scene: SyntheticSceneSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthResponse {
    pub out: PathBuf,
    pub summary: SynthSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRequest {
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobAccepted {
    pub job_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Running,
    Succeeded,
    Failed,
}

/// Progress of a training job. `epochs` holds the reports from index
/// `first_epoch` on, as requested by the poller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub job_id: String,
    pub state: JobState,
    pub first_epoch: usize,
    pub epochs: Vec<EpochReport>,
    pub summary: Option<TrainSummary>,
    pub error: Option<ErrorBody>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCall {
    pub config: RunConfig,
    pub request: EvalRequest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResponse {
    pub evaluation: Evaluation,
    pub report: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub weights: PathBuf,
    pub clip_dir: PathBuf,
    pub target_hz: f64,
    pub out: PathBuf,
}

pub type PredictResponse = PredictSummary;

/// Error payload of every failed request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: ErrorKind,
    pub message: String,
}

impl From<&Error> for ErrorBody {
    fn from(e: &Error) -> Self {
        Self {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

impl std::fmt::Display for ErrorBody {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for ErrorBody {}
