//! Sliding-window prediction with overlapping-output averaging, MPJPE
//! evaluation and per-action report tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datapipe::{center_pelvis, window_input, FrameStream, RawClip};
use crate::error::{Error, Result};
use crate::network::{NetworkParams, COORDS, WINDOW};
use crate::tensor::{Scalar, Tensor};
use crate::training::mpjpe;

/// Anything that maps one `[3, 5, S, S]` window to a flat `[5 * joints * 3]`
/// pose vector.
pub trait PosePredictor: Sync {
    fn joints(&self) -> usize;

    fn predict_window(&self, input: &Tensor<f64>) -> Result<Tensor<f64>>;
}

impl<T: Scalar> PosePredictor for NetworkParams<T> {
    fn joints(&self) -> usize {
        self.config.joints
    }

    fn predict_window(&self, input: &Tensor<f64>) -> Result<Tensor<f64>> {
        Ok(self.predict(&input.cast())?.cast())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FramePrediction {
    /// Source frame index.
    pub frame: usize,
    /// `[joints, 3]` in mm, pelvis-relative.
    pub joints: Tensor<f64>,
    /// Number of windows that covered this frame.
    pub count: usize,
}

/// Average per-window `[5, joints, 3]` outputs into one pose per frame.
/// Window `s` covers stream positions `s..s + 5`.
///
/// The mean is taken as the first contribution plus the mean deviation from
/// it, so identical contributions reproduce that value bit for bit.
pub fn average_windows(outputs: &[Tensor<f64>], frames: usize) -> Result<Vec<(Tensor<f64>, usize)>> {
    if frames < WINDOW || outputs.len() != frames - WINDOW + 1 {
        return Err(Error::InvalidInput(format!(
            "{} window outputs cannot tile {frames} frames",
            outputs.len()
        )));
    }
    let shape = outputs[0].shape().to_vec();
    let per = outputs[0].len() / WINDOW;
    (0..frames)
        .map(|f| {
            let first = f.saturating_sub(WINDOW - 1);
            let last = f.min(frames - WINDOW);
            let slices: Vec<&[f64]> = (first..=last)
                .map(|s| {
                    let pos = f - s;
                    &outputs[s].data()[pos * per..(pos + 1) * per]
                })
                .collect();
            let anchor = slices[0];
            let k = slices.len() as f64;
            let mean = (0..per)
                .map(|i| {
                    let dev: f64 = slices.iter().map(|s| s[i] - anchor[i]).sum();
                    anchor[i] + dev / k
                })
                .collect();
            Ok((Tensor::from_vec(&shape[1..], mean)?, slices.len()))
        })
        .collect()
}

/// Predict every frame of a decimated stream: one window per start offset,
/// overlapping outputs averaged per frame.
pub fn predict_clip(model: &impl PosePredictor, stream: &FrameStream) -> Result<Vec<FramePrediction>> {
    let n = stream.len();
    if n < WINDOW {
        return Err(Error::TooShort {
            frames: n,
            needed: WINDOW,
        });
    }
    let shape = [WINDOW, model.joints(), COORDS];
    let outputs = (0..=n - WINDOW)
        .into_par_iter()
        .map(|s| {
            let input = window_input(&stream.frames[s..s + WINDOW])?;
            model.predict_window(&input)?.reshape(&shape)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(average_windows(&outputs, n)?
        .into_iter()
        .zip(&stream.frame_indices)
        .map(|((joints, count), &frame)| FramePrediction { frame, joints, count })
        .collect())
}

/// Predictions and pelvis-centered ground truth of one clip.
#[derive(Debug, Clone)]
pub struct ClipEvaluation {
    pub action: String,
    pub predictions: Vec<FramePrediction>,
    /// Source frame index to `[joints, 3]`.
    pub truth: BTreeMap<usize, Tensor<f64>>,
}

impl ClipEvaluation {
    pub fn from_clip(clip: &RawClip, predictions: Vec<FramePrediction>) -> Result<Self> {
        let frames: Vec<usize> = predictions.iter().map(|p| p.frame).collect();
        if let Some(&bad) = frames.iter().find(|&&f| f >= clip.len()) {
            return Err(Error::Alignment(format!("clip {} has no frame {bad}", clip.id)));
        }
        let centered = center_pelvis(&clip.joints_at(&frames))?;
        let per = clip.joint_count() * COORDS;
        let truth = frames
            .iter()
            .zip(centered.data().chunks(per))
            .map(|(&f, c)| Ok((f, Tensor::from_vec(&[clip.joint_count(), COORDS], c.to_vec())?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            action: clip.action.clone(),
            predictions,
            truth,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionReport {
    pub action: String,
    pub mpjpe_mm: f64,
    pub baseline_mm: Option<f64>,
    pub improvement_pct: Option<f64>,
    pub frames: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub reports: Vec<ActionReport>,
    /// Unweighted mean of the per-action means.
    pub overall_mm: f64,
    pub overall_baseline_mm: Option<f64>,
    pub overall_improvement_pct: Option<f64>,
}

pub fn improvement_pct(ours: f64, baseline: f64) -> f64 {
    (baseline - ours) / baseline * 100.0
}

impl Evaluation {
    /// Build reports from per-action means. Baselines are matched by action
    /// name; the overall baseline averages the matched baselines.
    pub fn summarize(per_action: Vec<(String, f64, Option<usize>)>, baselines: Option<&[(String, f64)]>) -> Result<Self> {
        if per_action.is_empty() {
            return Err(Error::InvalidInput("no actions to summarize".into()));
        }
        let lookup: BTreeMap<&str, f64> = baselines
            .unwrap_or_default()
            .iter()
            .map(|(a, v)| (a.as_str(), *v))
            .collect();
        let reports: Vec<ActionReport> = per_action
            .into_iter()
            .map(|(action, mpjpe_mm, frames)| {
                let baseline_mm = lookup.get(action.as_str()).copied();
                ActionReport {
                    improvement_pct: baseline_mm.map(|b| improvement_pct(mpjpe_mm, b)),
                    action,
                    mpjpe_mm,
                    baseline_mm,
                    frames,
                }
            })
            .collect();
        let overall_mm = reports.iter().map(|r| r.mpjpe_mm).sum::<f64>() / reports.len() as f64;
        let matched: Vec<f64> = reports.iter().filter_map(|r| r.baseline_mm).collect();
        let overall_baseline_mm =
            (baselines.is_some() && !matched.is_empty()).then(|| matched.iter().sum::<f64>() / matched.len() as f64);
        Ok(Self {
            overall_improvement_pct: overall_baseline_mm.map(|b| improvement_pct(overall_mm, b)),
            reports,
            overall_mm,
            overall_baseline_mm,
        })
    }

    /// The summary row appended below the per-action rows.
    pub fn average_row(&self) -> ActionReport {
        let frames = self.reports.iter().map(|r| r.frames).sum::<Option<usize>>();
        ActionReport {
            action: "Average".into(),
            mpjpe_mm: self.overall_mm,
            baseline_mm: self.overall_baseline_mm,
            improvement_pct: self.overall_improvement_pct,
            frames,
        }
    }

    /// Per-action rows followed by the average row.
    pub fn table(&self) -> Vec<ActionReport> {
        let mut rows = self.reports.clone();
        rows.push(self.average_row());
        rows
    }
}

/// Per-action MPJPE over all predicted frames. Actions keep their order of
/// first appearance.
pub fn evaluate(clips: &[ClipEvaluation], baselines: Option<&[(String, f64)]>) -> Result<Evaluation> {
    let mut order: Vec<String> = Vec::new();
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for clip in clips {
        for p in &clip.predictions {
            let truth = clip.truth.get(&p.frame).ok_or_else(|| {
                Error::Alignment(format!("no ground truth for predicted frame {} ({})", p.frame, clip.action))
            })?;
            let err = mpjpe(&p.joints, truth)?;
            if !sums.contains_key(&clip.action) {
                order.push(clip.action.clone());
            }
            let entry = sums.entry(clip.action.clone()).or_insert((0.0, 0));
            entry.0 += err;
            entry.1 += 1;
        }
    }
    let per_action = order
        .into_iter()
        .map(|a| {
            let (sum, n) = sums[&a];
            (a, sum / n as f64, Some(n))
        })
        .collect();
    Evaluation::summarize(per_action, baselines)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    Csv,
    PrettyTable,
}

pub fn render_csv(reports: &[ActionReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["action", "mpjpe_mm", "baseline_mm", "improvement_pct", "frames"])
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    for r in reports {
        w.serialize((&r.action, r.mpjpe_mm, r.baseline_mm, r.improvement_pct, r.frames))
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn render_pretty(reports: &[ActionReport]) -> String {
    let opt = |v: Option<f64>, prec: usize| v.map_or_else(|| "-".to_string(), |v| format!("{v:.prec$}"));
    let width = reports.iter().map(|r| r.action.len()).max().unwrap_or(0).max(6);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>9}  {:>9}  {:>8}", "action", "MPJPE mm", "baseline", "improv %");
    for r in reports {
        let _ = writeln!(
            out,
            "{:<width$}  {:>9.1}  {:>9}  {:>8}",
            r.action,
            r.mpjpe_mm,
            opt(r.baseline_mm, 1),
            opt(r.improvement_pct, 1)
        );
    }
    out
}

pub fn export_report(reports: &[ActionReport], path: &Path, format: ReportFormat) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::InvalidInput("no reports to export".into()));
    }
    let text = match format {
        ReportFormat::Csv => render_csv(reports)?,
        ReportFormat::PrettyTable => render_pretty(reports),
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn parse_report_csv(text: &str) -> Result<Vec<ActionReport>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Dataset(format!("report csv: {e}")))
}

pub fn read_report(path: &Path) -> Result<Vec<ActionReport>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_report_csv(&text)
}

/// `(action, mpjpe)` pairs of a report file, skipping any "Average" row.
pub fn read_baselines(path: &Path) -> Result<Vec<(String, f64)>> {
    Ok(read_report(path)?
        .into_iter()
        .filter(|r| r.action != "Average")
        .map(|r| (r.action, r.mpjpe_mm))
        .collect())
}

/// `poses.csv`: one `frame,joint,x,y,z` row per frame and joint.
pub fn write_poses(predictions: &[FramePrediction], path: &Path) -> Result<usize> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    let mut rows = 0;
    w.write_record(["frame", "joint", "x", "y", "z"])
        .map_err(|e| Error::Dataset(e.to_string()))?;
    for p in predictions {
        for (j, c) in p.joints.data().chunks_exact(COORDS).enumerate() {
            w.serialize((p.frame, j, c[0], c[1], c[2]))
                .map_err(|e| Error::Dataset(e.to_string()))?;
            rows += 1;
        }
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(rows)
}
