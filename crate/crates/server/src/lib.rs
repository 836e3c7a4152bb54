//! HTTP/JSON front end for the pipeline. Every operation runs on the
//! blocking pool; training runs as a background job that clients poll.
//!
//! Routes:
//! - `GET  /health`
//! - `POST /v1/synth`        `SynthRequest`  -> `SynthResponse`
//! - `POST /v1/train`        `TrainRequest`  -> 202 `JobAccepted`
//! - `GET  /v1/jobs/{id}`    `?since=N`      -> `JobStatus`
//! - `POST /v1/eval`         `EvalCall`      -> `EvalResponse`
//! - `POST /v1/predict`      `PredictRequest` -> `PredictResponse`
//!
//! Failures answer with an `ErrorBody` and a status derived from its kind.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

use pose3d::api::{
    ErrorBody, EvalCall, EvalResponse, Health, JobAccepted, JobState, JobStatus, PredictRequest, PredictResponse,
    SynthRequest, SynthResponse, TrainRequest,
};
use pose3d::datapipe::synth::generate_synthetic;
use pose3d::pipeline::{run_eval, run_predict, run_training, TrainSummary};
use pose3d::training::EpochReport;
use pose3d::{Error, ErrorKind};

#[derive(Debug)]
struct Job {
    state: JobState,
    epochs: Vec<EpochReport>,
    summary: Option<TrainSummary>,
    error: Option<ErrorBody>,
}

#[derive(Clone, Default)]
pub struct AppState {
    jobs: Arc<Mutex<HashMap<String, Job>>>,
}

pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn not_found(what: String) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            body: ErrorBody {
                kind: ErrorKind::Usage,
                message: what,
            },
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let body = ErrorBody::from(&e);
        let status = match body.kind {
            ErrorKind::Usage => StatusCode::BAD_REQUEST,
            ErrorKind::Data => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorKind::Divergence => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self { status, body }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

/// Run CPU-bound work off the async workers.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> pose3d::Result<T> + Send + 'static) -> Result<T, ApiError> {
    match tokio::task::spawn_blocking(f).await {
        Ok(result) => result.map_err(ApiError::from),
        Err(e) => Err(ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            body: ErrorBody {
                kind: ErrorKind::Data,
                message: format!("worker failed: {e}"),
            },
        }),
    }
}

async fn health() -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
    })
}

async fn synth(Json(req): Json<SynthRequest>) -> Result<Json<SynthResponse>, ApiError> {
    let out = req.out.clone();
    let summary = blocking(move || generate_synthetic(&req.scene, &req.options, &req.out)).await?;
    Ok(Json(SynthResponse { out, summary }))
}

async fn train(State(state): State<AppState>, Json(req): Json<TrainRequest>) -> Result<impl IntoResponse, ApiError> {
    req.config.validate()?;
    let job_id = uuid::Uuid::new_v4().to_string();
    state.jobs.lock().unwrap().insert(
        job_id.clone(),
        Job {
            state: JobState::Running,
            epochs: Vec::new(),
            summary: None,
            error: None,
        },
    );
    let jobs = state.jobs.clone();
    let id = job_id.clone();
    tokio::task::spawn_blocking(move || {
        let result = run_training(&req.config, |r| {
            if let Some(job) = jobs.lock().unwrap().get_mut(&id) {
                job.epochs.push(r.clone());
            }
        });
        let mut guard = jobs.lock().unwrap();
        let job = guard.get_mut(&id).expect("jobs are never removed");
        match result {
            Ok(summary) => {
                tracing::info!(job = %id, best = summary.best_val_mpjpe_mm, "training finished");
                job.state = JobState::Succeeded;
                job.summary = Some(summary);
            }
            Err(e) => {
                tracing::warn!(job = %id, error = %e, "training failed");
                job.state = JobState::Failed;
                job.error = Some(ErrorBody::from(&e));
            }
        }
    });
    Ok((StatusCode::ACCEPTED, Json(JobAccepted { job_id })))
}

#[derive(Deserialize)]
struct Since {
    #[serde(default)]
    since: usize,
}

async fn job(
    State(state): State<AppState>,
    Path(job_id): Path<String>,
    Query(q): Query<Since>,
) -> Result<Json<JobStatus>, ApiError> {
    let jobs = state.jobs.lock().unwrap();
    let job = jobs
        .get(&job_id)
        .ok_or_else(|| ApiError::not_found(format!("no such job: {job_id}")))?;
    let first_epoch = q.since.min(job.epochs.len());
    Ok(Json(JobStatus {
        job_id,
        state: job.state,
        first_epoch,
        epochs: job.epochs[first_epoch..].to_vec(),
        summary: job.summary.clone(),
        error: job.error.clone(),
    }))
}

async fn eval(Json(call): Json<EvalCall>) -> Result<Json<EvalResponse>, ApiError> {
    let report = call.request.report.clone();
    let evaluation = blocking(move || run_eval(&call.config, &call.request)).await?;
    Ok(Json(EvalResponse { evaluation, report }))
}

async fn predict(Json(req): Json<PredictRequest>) -> Result<Json<PredictResponse>, ApiError> {
    let summary = blocking(move || run_predict(&req.weights, &req.clip_dir, req.target_hz, &req.out)).await?;
    Ok(Json(summary))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/synth", post(synth))
        .route("/v1/train", post(train))
        .route("/v1/jobs/{id}", get(job))
        .route("/v1/eval", post(eval))
        .route("/v1/predict", post(predict))
        .with_state(state)
}

/// Bind `addr` (port 0 picks a free one) and serve in a background task.
pub async fn spawn(addr: SocketAddr) -> std::io::Result<(SocketAddr, JoinHandle<std::io::Result<()>>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    let handle = tokio::spawn(async move { axum::serve(listener, router(AppState::default())).await });
    Ok((local, handle))
}

/// Serve on `addr` until ctrl-c.
pub async fn serve(addr: SocketAddr) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(AppState::default()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
