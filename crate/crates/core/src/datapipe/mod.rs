//! Clip preprocessing: square crop, resize, per-channel contrast
//! normalization, temporal decimation into 5-frame windows and
//! pelvis-relative targets.

pub mod dataset;
pub mod image;
pub mod synth;

use ::image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{COORDS, WINDOW};
use crate::tensor::{RngState, Scalar, Tensor};

pub use self::image::{crop_square, gcn, resize_bilinear, rgb_to_tensor, BBox, GCN_EPS};

/// A clip as stored on disk: frames at the source rate with per-frame boxes
/// and ground-truth joints in millimetres.
#[derive(Debug, Clone)]
pub struct RawClip {
    pub id: String,
    pub action: String,
    pub fps: f64,
    pub frames: Vec<RgbImage>,
    pub boxes: Vec<BBox>,
    /// `[frames, joints, 3]`
    pub joints: Tensor<f64>,
}

impl RawClip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn joint_count(&self) -> usize {
        self.joints.shape()[1]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.frames.len();
        if self.boxes.len() != n || self.joints.shape()[0] != n {
            return Err(Error::Dataset(format!(
                "clip {}: {} frames, {} boxes, {} joint frames",
                self.id,
                n,
                self.boxes.len(),
                self.joints.shape()[0]
            )));
        }
        Ok(())
    }

    /// `[window, joints, 3]` ground truth for the given frames.
    pub fn joints_at(&self, frames: &[usize]) -> Tensor<f64> {
        let per = self.joint_count() * COORDS;
        let data = frames
            .iter()
            .flat_map(|&f| self.joints.data()[f * per..(f + 1) * per].iter().copied())
            .collect();
        Tensor::from_vec(&[frames.len(), self.joint_count(), COORDS], data).expect("non-empty frame list")
    }
}

/// One network input window and its target.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipSample<T: Scalar> {
    /// `[3, 5, S, S]`, contrast-normalized.
    pub input: Tensor<T>,
    /// `[5, joints, 3]` in mm, pelvis-centered.
    pub target: Tensor<T>,
    pub clip_id: String,
    pub frame_indices: Vec<usize>,
}

impl ClipSample<f64> {
    pub fn cast<T: Scalar>(&self) -> ClipSample<T> {
        ClipSample {
            input: self.input.cast(),
            target: self.target.cast(),
            clip_id: self.clip_id.clone(),
            frame_indices: self.frame_indices.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowOptions {
    pub target_hz: f64,
    pub window: usize,
    /// Windows to draw per clip; `None` takes every start.
    pub count: Option<usize>,
    pub input_size: usize,
}

impl Default for WindowOptions {
    fn default() -> Self {
        Self {
            target_hz: 13.0,
            window: WINDOW,
            count: None,
            input_size: crate::network::DEFAULT_INPUT_SIZE,
        }
    }
}

/// Integer decimation stride closest to `source_hz / target_hz`.
pub fn decimation_stride(source_hz: f64, target_hz: f64) -> usize {
    ((source_hz / target_hz).round() as usize).max(1)
}

pub fn decimated_indices(frames: usize, stride: usize) -> Vec<usize> {
    (0..frames).step_by(stride).collect()
}

/// Subtract joint 0 from every joint, per frame, on `[frames, joints, 3]`.
pub fn center_pelvis<T: Scalar>(joints: &Tensor<T>) -> Result<Tensor<T>> {
    let &[_, j, COORDS] = joints.shape() else {
        return Err(Error::InvalidShape {
            shape: joints.shape().to_vec(),
            reason: "joints are [frames, joints, 3]".into(),
        });
    };
    let mut out = joints.clone();
    for frame in out.data_mut().chunks_mut(j * COORDS) {
        let pelvis = [frame[0], frame[1], frame[2]];
        for joint in frame.chunks_mut(COORDS) {
            for (v, p) in joint.iter_mut().zip(pelvis) {
                *v = *v - p;
            }
        }
    }
    Ok(out)
}

/// Crop and resize one frame to `[3, size, size]` (before normalization).
pub fn prepare_frame(frame: &RgbImage, bbox: BBox, size: usize) -> Result<Tensor<f64>> {
    let bbox = bbox.clamp_to(frame.width(), frame.height());
    resize_bilinear(&crop_square(&rgb_to_tensor(frame), bbox)?, size)
}

/// Stack prepared `[3, S, S]` frames into `[3, T, S, S]` and normalize.
pub fn window_input(frames: &[Tensor<f64>]) -> Result<Tensor<f64>> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidInput("empty window".into()))?;
    let &[c, h, w] = first.shape() else {
        return Err(Error::InvalidShape {
            shape: first.shape().to_vec(),
            reason: "prepared frames are [3, S, S]".into(),
        });
    };
    let plane = h * w;
    let mut data = vec![0.0; c * frames.len() * plane];
    for (t, f) in frames.iter().enumerate() {
        if f.shape() != first.shape() {
            return Err(Error::mismatch("window frame", first.shape(), f.shape()));
        }
        for ch in 0..c {
            let dst = (ch * frames.len() + t) * plane;
            data[dst..dst + plane].copy_from_slice(&f.data()[ch * plane..(ch + 1) * plane]);
        }
    }
    Ok(gcn(&Tensor::from_vec(&[c, frames.len(), h, w], data)?))
}

/// The decimated, cropped and resized frames of a clip.
#[derive(Debug, Clone)]
pub struct FrameStream {
    pub clip_id: String,
    /// Source frame index of every stream element.
    pub frame_indices: Vec<usize>,
    pub frames: Vec<Tensor<f64>>,
}

impl FrameStream {
    pub fn from_clip(clip: &RawClip, target_hz: f64, size: usize) -> Result<Self> {
        clip.validate()?;
        let frame_indices = decimated_indices(clip.len(), decimation_stride(clip.fps, target_hz));
        let frames = frame_indices
            .par_iter()
            .map(|&f| prepare_frame(&clip.frames[f], clip.boxes[f], size))
            .collect::<Result<_>>()?;
        Ok(Self {
            clip_id: clip.id.clone(),
            frame_indices,
            frames,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Windows drawn from one clip plus how many clips were too short.
#[derive(Debug, Clone, Default)]
pub struct WindowSet {
    pub samples: Vec<ClipSample<f64>>,
    pub too_short: usize,
}

/// Decimate `clip` to roughly `target_hz`, pick window starts (all of them, or
/// `count` distinct seeded-random ones) and build each sample. Samples are
/// ordered by window start.
pub fn sample_windows(clip: &RawClip, opts: &WindowOptions, rng: &mut RngState) -> Result<WindowSet> {
    clip.validate()?;
    if opts.window == 0 {
        return Err(Error::Config("window must be positive".into()));
    }
    let decimated = decimated_indices(clip.len(), decimation_stride(clip.fps, opts.target_hz));
    if decimated.len() < opts.window {
        tracing::warn!(
            clip = %clip.id,
            frames = clip.len(),
            decimated = decimated.len(),
            "clip too short for a single window"
        );
        return Ok(WindowSet {
            samples: Vec::new(),
            too_short: 1,
        });
    }
    let available = decimated.len() - opts.window + 1;
    let starts = match opts.count {
        Some(k) => rng.choose_distinct(available, k),
        None => (0..available).collect(),
    };
    let samples = starts
        .par_iter()
        .map(|&s| {
            let frames = &decimated[s..s + opts.window];
            let prepared = frames
                .iter()
                .map(|&f| prepare_frame(&clip.frames[f], clip.boxes[f], opts.input_size))
                .collect::<Result<Vec<_>>>()?;
            Ok(ClipSample {
                input: window_input(&prepared)?,
                target: center_pelvis(&clip.joints_at(frames))?,
                clip_id: clip.id.clone(),
                frame_indices: frames.to_vec(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(WindowSet { samples, too_short: 0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stride_for_fifty_hz() {
        assert_eq!(decimation_stride(50.0, 13.0), 4);
        assert_eq!(decimated_indices(17, 4), vec![0, 4, 8, 12, 16]);
        assert_eq!(decimation_stride(13.0, 13.0), 1);
    }

    #[test]
    fn pelvis_centering() {
        let mut j = Tensor::<f64>::zeros(&[1, 17, 3]).unwrap();
        for (k, v) in [1.0, 1.0, 1.0].into_iter().enumerate() {
            j.set(&[0, 0, k], v).unwrap();
        }
        for (k, v) in [4.0, 5.0, 1.0].into_iter().enumerate() {
            j.set(&[0, 5, k], v).unwrap();
        }
        let c = center_pelvis(&j).unwrap();
        assert_eq!(&c.data()[15..18], &[3.0, 4.0, 0.0]);
        assert_eq!(&c.data()[..3], &[0.0, 0.0, 0.0]);
        assert_eq!(center_pelvis(&c).unwrap(), c);
        let shifted = j.map(|v| v + 10.0);
        assert_eq!(center_pelvis(&shifted).unwrap(), c);
    }

    #[test]
    fn window_input_layout() {
        let frames: Vec<Tensor<f64>> = (0..5)
            .map(|t| Tensor::from_vec(&[3, 2, 2], (0..12).map(|v| (v + 100 * t) as f64).collect()).unwrap())
            .collect();
        let x = window_input(&frames).unwrap();
        assert_eq!(x.shape(), &[3, 5, 2, 2]);
        // channel 0 of frame 1 sits right after channel 0 of frame 0
        assert!(x.get(&[0, 1, 0, 0]).unwrap() > x.get(&[0, 0, 1, 1]).unwrap());
    }
}
