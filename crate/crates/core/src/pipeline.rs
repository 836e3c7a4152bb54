//! End-to-end runs over an on-disk dataset: window loading, training with
//! an epoch log and weights file, split evaluation and per-clip prediction.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::datapipe::dataset::{read_clip, Dataset, Split};
use crate::datapipe::{sample_windows, ClipSample, FrameStream, WindowOptions};
use crate::error::{Error, Result};
use crate::inference::{
    evaluate, export_report, predict_clip, read_baselines, write_poses, ClipEvaluation, Evaluation, ReportFormat,
};
use crate::network::{ArchitectureConfig, NetworkParams};
use crate::tensor::{Dtype, RngState, Scalar};
use crate::training::{evaluate_mpjpe, train, EpochLog, EpochReport};
use crate::weights::{load_weights, save_weights};

/// Window sampling streams start here, one per clip in manifest order.
const WINDOW_STREAM_BASE: u64 = 100;

/// Windows of every clip in `split`, ordered by (clip, window start).
pub fn load_windows(
    dataset: &Dataset,
    split: Split,
    opts: &WindowOptions,
    seed: u64,
) -> Result<(Vec<ClipSample<f64>>, usize)> {
    let mut samples = Vec::new();
    let mut too_short = 0;
    for (i, entry) in dataset.manifest.clips.iter().enumerate() {
        if entry.split != split {
            continue;
        }
        let clip = dataset.load(entry)?;
        let mut rng = RngState::substream(seed, WINDOW_STREAM_BASE + i as u64);
        let set = sample_windows(&clip, opts, &mut rng)?;
        samples.extend(set.samples);
        too_short += set.too_short;
    }
    Ok((samples, too_short))
}

fn open_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let root = cfg
        .data
        .dataset
        .as_deref()
        .ok_or_else(|| Error::Config("data.dataset is not set".into()))?;
    Dataset::open(root)
}

fn window_options(cfg: &RunConfig, count: Option<usize>) -> WindowOptions {
    WindowOptions {
        target_hz: cfg.data.target_hz,
        window: cfg.data.window,
        count,
        input_size: cfg.architecture.input_size,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub seed: u64,
    pub precision: Dtype,
    pub train_windows: usize,
    pub val_windows: usize,
    /// Where validation windows came from: "val split", "holdout" or "training set".
    pub val_source: String,
    pub short_clips: usize,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_mpjpe_mm: f64,
    /// MPJPE of the returned weights over the training windows.
    pub train_mpjpe_mm: f64,
    pub weights: PathBuf,
    pub epoch_log: PathBuf,
}

/// Train per `cfg`, writing the epoch log as epochs finish and the best
/// weights at the end.
pub fn run_training(cfg: &RunConfig, mut on_epoch: impl FnMut(&EpochReport)) -> Result<TrainSummary> {
    cfg.validate()?;
    let dataset = open_dataset(cfg)?;
    let seed = cfg.training.seed;
    let (mut train_set, short_train) = load_windows(
        &dataset,
        Split::Train,
        &window_options(cfg, cfg.data.windows_per_clip),
        seed,
    )?;
    let (val_split, short_val) = load_windows(&dataset, Split::Val, &window_options(cfg, None), seed)?;
    let short_clips = short_train + short_val;
    if train_set.is_empty() {
        return Err(Error::Config(format!(
            "training set has zero windows ({short_train} clips too short for a {}-frame window)",
            cfg.data.window
        )));
    }
    let (val_set, val_source) = if !val_split.is_empty() {
        (val_split, "val split")
    } else if cfg.training.val_fraction > 0.0 {
        let held = ((train_set.len() as f64 * cfg.training.val_fraction).ceil() as usize).min(train_set.len() - 1);
        if held == 0 {
            (train_set.clone(), "training set")
        } else {
            let at = train_set.len() - held;
            (train_set.split_off(at), "holdout")
        }
    } else {
        (train_set.clone(), "training set")
    };
    tracing::info!(
        seed,
        train = train_set.len(),
        val = val_set.len(),
        source = val_source,
        "training windows loaded"
    );

    let mut log = EpochLog::create(&cfg.inference.epoch_log)?;
    let mut log_err = None;
    let mut callback = |r: &EpochReport| {
        if log_err.is_none() {
            log_err = log.append(r).err();
        }
        on_epoch(r);
    };
    let (epochs, best_epoch, best_val, train_mpjpe) = match cfg.training.precision {
        Dtype::F32 => fit::<f32>(cfg, &train_set, &val_set, &mut callback)?,
        Dtype::F64 => fit::<f64>(cfg, &train_set, &val_set, &mut callback)?,
    };
    if let Some(e) = log_err {
        return Err(e);
    }
    Ok(TrainSummary {
        seed,
        precision: cfg.training.precision,
        train_windows: train_set.len(),
        val_windows: val_set.len(),
        val_source: val_source.into(),
        short_clips,
        epochs,
        best_epoch,
        best_val_mpjpe_mm: best_val,
        train_mpjpe_mm: train_mpjpe,
        weights: cfg.inference.weights.clone(),
        epoch_log: cfg.inference.epoch_log.clone(),
    })
}

fn fit<T: Scalar>(
    cfg: &RunConfig,
    train_set: &[ClipSample<f64>],
    val_set: &[ClipSample<f64>],
    on_epoch: &mut impl FnMut(&EpochReport),
) -> Result<(usize, usize, f64, f64)> {
    let train_t: Vec<ClipSample<T>> = train_set.iter().map(ClipSample::cast).collect();
    let val_t: Vec<ClipSample<T>> = val_set.iter().map(ClipSample::cast).collect();
    let outcome = train(&cfg.training, &cfg.architecture, &train_t, &val_t, on_epoch)?;
    save_weights(&outcome.params, &cfg.inference.weights)?;
    let train_mpjpe = evaluate_mpjpe(&outcome.params, &train_t)?;
    Ok((
        outcome.reports.len(),
        outcome.best_epoch,
        outcome.best_val_mpjpe_mm,
        train_mpjpe,
    ))
}

/// Load weights for inference, checking them against `expected` when given.
pub fn load_model(path: &Path, expected: Option<&ArchitectureConfig>) -> Result<NetworkParams<f64>> {
    load_weights(path, expected)
}

/// Predict and score every clip of `split`. Clips too short for one window
/// are skipped with a warning.
pub fn evaluate_split(
    model: &NetworkParams<f64>,
    dataset: &Dataset,
    split: Split,
    target_hz: f64,
    baselines: Option<&[(String, f64)]>,
) -> Result<Evaluation> {
    let mut clips = Vec::new();
    for entry in dataset.entries(split) {
        let clip = dataset.load(entry)?;
        let stream = FrameStream::from_clip(&clip, target_hz, model.config.input_size)?;
        let predictions = match predict_clip(model, &stream) {
            Ok(p) => p,
            Err(Error::TooShort { frames, .. }) => {
                tracing::warn!(clip = %clip.id, frames, "skipping clip shorter than one window");
                continue;
            }
            Err(e) => return Err(e),
        };
        clips.push(ClipEvaluation::from_clip(&clip, predictions)?);
    }
    if clips.is_empty() {
        return Err(Error::Dataset(format!("no {split} clips long enough to evaluate")));
    }
    evaluate(&clips, baselines)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRequest {
    pub weights: PathBuf,
    pub split: Split,
    pub report: PathBuf,
    pub format: ReportFormat,
    pub baseline: Option<PathBuf>,
}

/// Evaluate `request.weights` on a split and export the report table.
pub fn run_eval(cfg: &RunConfig, request: &EvalRequest) -> Result<Evaluation> {
    cfg.validate()?;
    let dataset = open_dataset(cfg)?;
    let model = load_model(&request.weights, Some(&cfg.architecture))?;
    let baselines = request.baseline.as_deref().map(read_baselines).transpose()?;
    let eval = evaluate_split(&model, &dataset, request.split, cfg.data.target_hz, baselines.as_deref())?;
    export_report(&eval.table(), &request.report, request.format)?;
    Ok(eval)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictSummary {
    pub clip: PathBuf,
    pub frames: usize,
    pub rows: usize,
    /// Pelvis-relative MPJPE against the clip's own joints.
    pub mpjpe_mm: f64,
    pub out: PathBuf,
}

/// Predict one clip directory and write `poses.csv` rows for every
/// decimated frame.
pub fn run_predict(weights: &Path, clip_dir: &Path, target_hz: f64, out: &Path) -> Result<PredictSummary> {
    let model = load_model(weights, None)?;
    let id = clip_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "clip".into());
    let clip = read_clip(clip_dir, &id)?;
    let stream = FrameStream::from_clip(&clip, target_hz, model.config.input_size)?;
    let predictions = predict_clip(&model, &stream)?;
    let rows = write_poses(&predictions, out)?;
    let eval = evaluate(&[ClipEvaluation::from_clip(&clip, predictions)?], None)?;
    Ok(PredictSummary {
        clip: clip_dir.to_path_buf(),
        frames: stream.len(),
        rows,
        mpjpe_mm: eval.overall_mm,
        out: out.to_path_buf(),
    })
}
