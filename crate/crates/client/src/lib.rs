//! Async client for the pose3d HTTP service.

use std::time::Duration;

use reqwest::{Response, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;

use pose3d::api::{
    ErrorBody, EvalCall, EvalResponse, Health, JobAccepted, JobState, JobStatus, PredictRequest, PredictResponse,
    SynthRequest, SynthResponse, TrainRequest,
};
use pose3d::pipeline::TrainSummary;
use pose3d::training::EpochReport;
use pose3d::ErrorKind;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    /// The service answered with an error body.
    #[error("{0}")]
    Api(ErrorBody),
    #[error("request to {url} failed: {source}")]
    Transport {
        url: String,
        #[source]
        source: reqwest::Error,
    },
    #[error("unexpected response {status} from {url}: {body}")]
    Protocol {
        url: String,
        status: StatusCode,
        body: String,
    },
}

impl ClientError {
    /// Service errors carry their own kind; transport trouble counts as a
    /// usage problem (wrong `--server`, service down).
    pub fn kind(&self) -> ErrorKind {
        match self {
            ClientError::Api(body) => body.kind,
            _ => ErrorKind::Usage,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
    poll: Duration,
}

impl Client {
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            base: base.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
            poll: Duration::from_millis(200),
        }
    }

    /// Interval between job status polls in `train`.
    pub fn with_poll_interval(mut self, poll: Duration) -> Self {
        self.poll = poll;
        self
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn decode<T: DeserializeOwned>(url: &str, resp: Response) -> Result<T> {
        let status = resp.status();
        let transport = |source| ClientError::Transport {
            url: url.to_string(),
            source,
        };
        let text = resp.text().await.map_err(transport)?;
        if status.is_success() {
            return serde_json::from_str(&text).map_err(|e| ClientError::Protocol {
                url: url.to_string(),
                status,
                body: format!("{e}: {text}"),
            });
        }
        match serde_json::from_str::<ErrorBody>(&text) {
            Ok(body) => Err(ClientError::Api(body)),
            Err(_) => Err(ClientError::Protocol {
                url: url.to_string(),
                status,
                body: text,
            }),
        }
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        let url = format!("{}{path}", self.base);
        let resp = self.http.get(&url).send().await.map_err(|source| ClientError::Transport {
            url: url.clone(),
            source,
        })?;
        Self::decode(&url, resp).await
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        let url = format!("{}{path}", self.base);
        let resp = self
            .http
            .post(&url)
            .json(body)
            .send()
            .await
            .map_err(|source| ClientError::Transport {
                url: url.clone(),
                source,
            })?;
        Self::decode(&url, resp).await
    }

    pub async fn health(&self) -> Result<Health> {
        self.get("/health").await
    }

    pub async fn synth(&self, req: &SynthRequest) -> Result<SynthResponse> {
        self.post("/v1/synth", req).await
    }

    pub async fn start_training(&self, req: &TrainRequest) -> Result<JobAccepted> {
        self.post("/v1/train", req).await
    }

    /// Job status with epoch reports from index `since` on.
    pub async fn job(&self, job_id: &str, since: usize) -> Result<JobStatus> {
        self.get(&format!("/v1/jobs/{job_id}?since={since}")).await
    }

    /// Start a training job and poll it to completion, handing each epoch
    /// report to `on_epoch` once.
    pub async fn train(&self, req: &TrainRequest, mut on_epoch: impl FnMut(&EpochReport)) -> Result<TrainSummary> {
        let job = self.start_training(req).await?;
        let mut seen = 0;
        loop {
            let status = self.job(&job.job_id, seen).await?;
            for r in &status.epochs {
                on_epoch(r);
            }
            seen = status.first_epoch + status.epochs.len();
            match status.state {
                JobState::Running => tokio::time::sleep(self.poll).await,
                JobState::Succeeded => {
                    return status.summary.ok_or_else(|| ClientError::Protocol {
                        url: format!("{}/v1/jobs/{}", self.base, job.job_id),
                        status: StatusCode::OK,
                        body: "finished job without a summary".into(),
                    })
                }
                JobState::Failed => {
                    return Err(ClientError::Api(status.error.unwrap_or(ErrorBody {
                        kind: ErrorKind::Data,
                        message: "training failed".into(),
                    })))
                }
            }
        }
    }

    pub async fn eval(&self, call: &EvalCall) -> Result<EvalResponse> {
        self.post("/v1/eval", call).await
    }

    pub async fn predict(&self, req: &PredictRequest) -> Result<PredictResponse> {
        self.post("/v1/predict", req).await
    }
}
