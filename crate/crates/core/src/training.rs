//! MPJPE loss, Nesterov-momentum SGD and the early-stopped mini-batch loop.

use std::fs::{File, OpenOptions};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datapipe::ClipSample;
use crate::error::{Error, Result};
use crate::network::{ArchitectureConfig, NetworkGrads, NetworkParams, COORDS, WINDOW};
use crate::tensor::{Dtype, RngState, Scalar, Tensor};

/// Joint distances below this get a zero gradient.
pub const MPJPE_GRAD_EPS: f64 = 1e-12;

/// RNG streams derived from the run seed.
const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;

fn pose_pairs<T: Scalar>(pred: &Tensor<T>, truth: &Tensor<T>) -> Result<usize> {
    if pred.shape() != truth.shape() {
        return Err(Error::mismatch("mpjpe", truth.shape(), pred.shape()));
    }
    if pred.shape().last() != Some(&COORDS) {
        return Err(Error::InvalidShape {
            shape: pred.shape().to_vec(),
            reason: "poses must end in an xyz axis".into(),
        });
    }
    if !pred.all_finite() || !truth.all_finite() {
        return Err(Error::InvalidInput("non-finite joint coordinate".into()));
    }
    Ok(pred.len() / COORDS)
}

/// Mean Euclidean distance over all (frame, joint) pairs, in the input units.
pub fn mpjpe<T: Scalar>(pred: &Tensor<T>, truth: &Tensor<T>) -> Result<f64> {
    let pairs = pose_pairs(pred, truth)?;
    let total: f64 = pred
        .data()
        .chunks_exact(COORDS)
        .zip(truth.data().chunks_exact(COORDS))
        .map(|(p, t)| joint_distance(p, t))
        .sum();
    Ok(total / pairs as f64)
}

fn joint_distance<T: Scalar>(p: &[T], t: &[T]) -> f64 {
    p.iter()
        .zip(t)
        .map(|(&a, &b)| {
            let d = (a - b).to_f64().unwrap();
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Gradient of `mpjpe` with respect to `pred`.
pub fn mpjpe_gradient<T: Scalar>(pred: &Tensor<T>, truth: &Tensor<T>) -> Result<Tensor<T>> {
    let pairs = pose_pairs(pred, truth)?;
    let mut grad = Tensor::zeros_like(pred);
    for ((g, p), t) in grad
        .data_mut()
        .chunks_exact_mut(COORDS)
        .zip(pred.data().chunks_exact(COORDS))
        .zip(truth.data().chunks_exact(COORDS))
    {
        let dist = joint_distance(p, t);
        if dist < MPJPE_GRAD_EPS {
            continue;
        }
        let scale = 1.0 / (pairs as f64 * dist);
        for ((gv, &a), &b) in g.iter_mut().zip(p).zip(t) {
            *gv = T::from_f64_lossy((a - b).to_f64().unwrap() * scale);
        }
    }
    Ok(grad)
}

/// Velocities for Nesterov momentum in the lookahead form:
/// `v <- mu v - lr grad(theta + mu v)`, `theta <- theta + v`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T: Scalar> {
    velocity: Vec<Tensor<T>>,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &[&Tensor<T>], learning_rate: f64, momentum: f64) -> Self {
        Self {
            velocity: params.iter().map(|t| Tensor::zeros_like(t)).collect(),
            learning_rate,
            momentum,
        }
    }

    pub fn velocity(&self) -> &[Tensor<T>] {
        &self.velocity
    }

    /// `theta + mu v`, the point the next gradient must be evaluated at.
    pub fn lookahead(&self, params: &[&Tensor<T>]) -> Result<Vec<Tensor<T>>> {
        let mu = T::from_f64_lossy(self.momentum);
        params
            .iter()
            .zip(&self.velocity)
            .map(|(p, v)| {
                let mut out = (*p).clone();
                out.add_scaled(v, mu)?;
                Ok(out)
            })
            .collect()
    }

    /// Apply one update with gradients taken at the lookahead point.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != self.velocity.len() || grads.len() != self.velocity.len() {
            return Err(Error::Config(format!(
                "optimizer tracks {} tensors, got {} params and {} grads",
                self.velocity.len(),
                params.len(),
                grads.len()
            )));
        }
        let mu = T::from_f64_lossy(self.momentum);
        let lr = T::from_f64_lossy(self.learning_rate);
        for ((p, v), g) in params.iter_mut().zip(&mut self.velocity).zip(grads) {
            if p.shape() != g.shape() || v.shape() != g.shape() {
                return Err(Error::mismatch("nesterov step", p.shape(), g.shape()));
            }
            for ((pv, vv), &gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *vv = mu * *vv - lr * gv;
                *pv = *pv + *vv;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchBudget {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for BatchBudget {
    fn default() -> Self {
        Self {
            train: 20_000,
            val: 2_000,
            test: 2_000,
        }
    }
}

/// Starting value of the output layer bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadBiasInit {
    Zero,
    /// Mean pelvis-centered target over the training windows.
    MeanTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub precision: Dtype,
    /// Keep PReLU slopes at their initial value.
    pub freeze_prelu: bool,
    pub head_bias_init: HeadBiasInit,
    /// Fraction of training windows held out for validation when the
    /// dataset has no validation split; 0 validates on the training set.
    pub val_fraction: f64,
    /// Upper bound on batches drawn per split.
    pub budget: BatchBudget,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            momentum: 0.9,
            batch_size: 10,
            patience: 15,
            max_epochs: 1000,
            seed: 0,
            precision: Dtype::F32,
            freeze_prelu: false,
            head_bias_init: HeadBiasInit::MeanTarget,
            val_fraction: 0.0,
            budget: BatchBudget::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.patience == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size, patience and max_epochs must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!("val_fraction must be in [0, 1), got {}", self.val_fraction)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss_mm: f64,
    pub val_mpjpe_mm: f64,
    pub seconds: f64,
}

/// Patience bookkeeping: improvement means strictly lower than the best so far.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, score: f64) -> Verdict {
        match self.best {
            Some((_, best)) if score >= best => {
                self.stale += 1;
                if self.stale >= self.patience {
                    Verdict::Stop
                } else {
                    Verdict::Continue
                }
            }
            _ => {
                self.best = Some((epoch, score));
                self.stale = 0;
                Verdict::Improved
            }
        }
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Scalar> {
    pub params: NetworkParams<T>,
    pub reports: Vec<EpochReport>,
    pub best_epoch: usize,
    pub best_val_mpjpe_mm: f64,
}

/// Loss and parameter gradients of one sample.
pub fn sample_gradient<T: Scalar>(
    params: &NetworkParams<T>,
    sample: &ClipSample<T>,
) -> Result<(f64, NetworkGrads<T>)> {
    let (out, trace) = params.forward(&sample.input)?;
    let pred = out.reshape(sample.target.shape())?;
    let loss = mpjpe(&pred, &sample.target).unwrap_or(f64::NAN);
    if !loss.is_finite() {
        return Ok((loss, NetworkGrads::zeros_like(params)));
    }
    let grad = mpjpe_gradient(&pred, &sample.target)?.flatten();
    Ok((loss, params.backward(&trace, &grad)?))
}

/// Batch-mean loss and gradient; per-sample work runs in parallel and is
/// reduced in sample order.
pub fn batch_gradient<T: Scalar>(
    params: &NetworkParams<T>,
    batch: &[&ClipSample<T>],
) -> Result<(f64, NetworkGrads<T>)> {
    let per_sample: Vec<(f64, NetworkGrads<T>)> = batch
        .par_iter()
        .map(|s| sample_gradient(params, s))
        .collect::<Result<_>>()?;
    let inv = T::from_f64_lossy(1.0 / batch.len() as f64);
    let mut total = NetworkGrads::zeros_like(params);
    let mut loss = 0.0;
    for (l, g) in &per_sample {
        loss += l;
        total.accumulate(g, inv)?;
    }
    Ok((loss / batch.len() as f64, total))
}

/// Mean MPJPE of `params` over `samples`.
pub fn evaluate_mpjpe<T: Scalar>(params: &NetworkParams<T>, samples: &[ClipSample<T>]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty set".into()));
    }
    let scores: Vec<f64> = samples
        .par_iter()
        .map(|s| {
            let pred = params.predict(&s.input)?.reshape(s.target.shape())?;
            Ok(mpjpe(&pred, &s.target).unwrap_or(f64::NAN))
        })
        .collect::<Result<_>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

pub fn check_samples<T: Scalar>(arch: &ArchitectureConfig, samples: &[ClipSample<T>], split: &str) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Config(format!("{split} set is empty")));
    }
    let target = [WINDOW, arch.joints, COORDS];
    for s in samples {
        if s.input.shape() != arch.input_shape() {
            return Err(Error::mismatch(format!("{split} sample input"), &arch.input_shape(), s.input.shape()));
        }
        if s.target.shape() != target {
            return Err(Error::mismatch(format!("{split} sample target"), &target, s.target.shape()));
        }
    }
    Ok(())
}

/// Element-wise mean of the flattened targets, accumulated in 64-bit.
pub fn mean_target<T: Scalar>(samples: &[ClipSample<T>]) -> Result<Tensor<T>> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Config("cannot average an empty set".into()))?;
    let mut acc = vec![0.0f64; first.target.len()];
    for s in samples {
        for (a, v) in acc.iter_mut().zip(s.target.data()) {
            *a += v.to_f64().unwrap_or(f64::NAN);
        }
    }
    let n = samples.len() as f64;
    Tensor::from_vec(&[acc.len()], acc.into_iter().map(|a| T::from_f64_lossy(a / n)).collect())
}

/// Early-stopped mini-batch training. Returns the parameters of the epoch
/// with the lowest validation MPJPE.
pub fn train<T: Scalar>(
    cfg: &TrainConfig,
    arch: &ArchitectureConfig,
    train_set: &[ClipSample<T>],
    val_set: &[ClipSample<T>],
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    arch.validate()?;
    check_samples(arch, train_set, "training")?;
    check_samples(arch, val_set, "validation")?;

    let mut params = NetworkParams::<T>::build(arch, &mut RngState::substream(cfg.seed, INIT_STREAM))?;
    if cfg.head_bias_init == HeadBiasInit::MeanTarget {
        params.head.bias = mean_target(train_set)?;
    }
    let mut shuffle_rng = RngState::substream(cfg.seed, SHUFFLE_STREAM);
    let mut optimizer = OptimizerState::new(&params.tensors(), cfg.learning_rate, cfg.momentum);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = params.clone();
    let mut reports = Vec::new();
    let slope_slots: Vec<usize> = (0..5).map(|k| 3 * k + 2).collect();

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&ClipSample<T>> = chunk.iter().map(|&i| &train_set[i]).collect();
            let ahead = NetworkParams::from_tensors(arch, optimizer.lookahead(&params.tensors())?)?;
            let (loss, mut grads) = batch_gradient(&ahead, &batch)?;
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("non-finite training loss {loss}"),
                });
            }
            if cfg.freeze_prelu {
                for &k in &slope_slots {
                    grads.tensors[k] = Tensor::zeros_like(&grads.tensors[k]);
                }
            }
            optimizer.step(&mut params.tensors_mut(), &grads.tensors)?;
            loss_sum += loss * batch.len() as f64;
        }
        let val = evaluate_mpjpe(&params, val_set)?;
        if !val.is_finite() {
            return Err(Error::Divergence {
                epoch,
                detail: format!("non-finite validation MPJPE {val}"),
            });
        }
        let report = EpochReport {
            epoch,
            train_loss_mm: loss_sum / train_set.len() as f64,
            val_mpjpe_mm: val,
            seconds: started.elapsed().as_secs_f64(),
        };
        tracing::debug!(epoch, train = report.train_loss_mm, val, "epoch done");
        on_epoch(&report);
        reports.push(report);
        match stopper.observe(epoch, val) {
            Verdict::Improved => best = params.clone(),
            Verdict::Continue => {}
            Verdict::Stop => break,
        }
    }
    let (best_epoch, best_val_mpjpe_mm) = stopper.best().expect("at least one epoch ran");
    Ok(TrainOutcome {
        params: best,
        reports,
        best_epoch,
        best_val_mpjpe_mm,
    })
}

/// Append-only CSV of epoch reports.
pub struct EpochLog {
    writer: csv::Writer<File>,
}

impl EpochLog {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)
            .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        writer
            .write_record(["epoch", "train_loss_mm", "val_mpjpe_mm", "seconds"])
            .and_then(|_| writer.flush().map_err(Into::into))
            .map_err(|e| Error::Dataset(format!("epoch log: {e}")))?;
        Ok(Self { writer })
    }

    pub fn append(&mut self, report: &EpochReport) -> Result<()> {
        self.writer
            .serialize(report)
            .and_then(|_| self.writer.flush().map_err(Into::into))
            .map_err(|e| Error::Dataset(format!("epoch log: {e}")))
    }
}

pub fn read_epoch_log(path: &Path) -> Result<Vec<EpochReport>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    reader
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))
}
