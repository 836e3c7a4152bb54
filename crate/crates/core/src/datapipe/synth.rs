//! Synthetic stick-figure clips: a 17-joint skeleton driven by sinusoidal
//! motion, rendered through a pinhole camera with anti-aliased limbs.

use std::f64::consts::PI;
use std::path::Path;

use image::{Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{write_clip, ClipMeta, Dataset, Intrinsics, Manifest, ManifestEntry, Split};
use super::{decimated_indices, decimation_stride, BBox, RawClip};
use crate::error::{Error, Result};
use crate::network::{COORDS, DEFAULT_JOINTS, WINDOW};
use crate::tensor::{RngState, Tensor};

pub const JOINT_NAMES: [&str; DEFAULT_JOINTS] = [
    "pelvis",
    "r_hip",
    "r_knee",
    "r_ankle",
    "l_hip",
    "l_knee",
    "l_ankle",
    "spine",
    "thorax",
    "neck",
    "head",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
];

pub const PARENTS: [Option<usize>; DEFAULT_JOINTS] = [
    None,
    Some(0),
    Some(1),
    Some(2),
    Some(0),
    Some(4),
    Some(5),
    Some(0),
    Some(7),
    Some(8),
    Some(9),
    Some(8),
    Some(11),
    Some(12),
    Some(8),
    Some(14),
    Some(15),
];

/// Rest direction of each bone (joint relative to its parent) in the body
/// frame: x towards the subject's left, y up, z forward.
const BONE_DIRS: [[f64; 3]; DEFAULT_JOINTS] = [
    [0.0, 0.0, 0.0],
    [-1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, -1.0, 0.0],
    [1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 1.0, 0.0],
    [1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, -1.0, 0.0],
    [-1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, -1.0, 0.0],
];

pub const DEFAULT_LIMB_LENGTHS: [f64; DEFAULT_JOINTS] = [
    0.0, 120.0, 440.0, 430.0, 120.0, 440.0, 430.0, 230.0, 250.0, 110.0, 110.0, 150.0, 280.0, 250.0, 150.0,
    280.0, 250.0,
];

pub const ACTIONS: [&str; 2] = ["Walking", "Waving"];

const LIMB_RADIUS_MM: f64 = 40.0;
const MARKER_RADIUS_PX: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSceneSpec {
    pub seed: u64,
    /// Bone length (mm) from each joint's parent; entry 0 is unused.
    pub limb_lengths: [f64; DEFAULT_JOINTS],
    pub gait_hz: f64,
    /// Peak hip swing in radians.
    pub amplitude: f64,
    pub intrinsics: Intrinsics,
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    /// Mean pelvis distance from the camera.
    pub depth_mm: f64,
    /// Per-clip body yaw is drawn from +-this range.
    pub yaw_range_deg: f64,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            limb_lengths: DEFAULT_LIMB_LENGTHS,
            gait_hz: 1.0,
            amplitude: 0.5,
            intrinsics: Intrinsics {
                fx: 220.0,
                fy: 220.0,
                cx: 80.0,
                cy: 80.0,
            },
            width: 160,
            height: 160,
            fps: 50.0,
            depth_mm: 4000.0,
            yaw_range_deg: 40.0,
        }
    }
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || !(self.fps > 0.0) || !(self.depth_mm > 0.0) {
            return Err(Error::Scene("image size, fps and depth must be positive".into()));
        }
        if self.limb_lengths[1..].iter().any(|&l| !(l > 0.0)) {
            return Err(Error::Scene("limb lengths must be positive".into()));
        }
        Ok(())
    }
}

/// Per-clip motion parameters drawn from the scene spec.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipMotion {
    pub action: &'static str,
    pub gait_hz: f64,
    pub amplitude: f64,
    pub phase: f64,
    pub yaw: f64,
    pub yaw_rate: f64,
    pub scale: f64,
    pub pelvis: [f64; 3],
}

impl ClipMotion {
    pub fn draw(spec: &SyntheticSceneSpec, index: usize, rng: &mut RngState) -> Self {
        let yaw_range = spec.yaw_range_deg.to_radians();
        Self {
            action: ACTIONS[index % ACTIONS.len()],
            gait_hz: spec.gait_hz * rng.uniform(0.8, 1.2),
            amplitude: spec.amplitude * rng.uniform(0.8, 1.2),
            phase: rng.uniform(0.0, 2.0 * PI),
            yaw: rng.uniform(-yaw_range, yaw_range),
            yaw_rate: rng.uniform(-0.2, 0.2),
            scale: rng.uniform(0.92, 1.08),
            pelvis: [
                rng.uniform(-150.0, 150.0),
                rng.uniform(-60.0, 60.0),
                spec.depth_mm + rng.uniform(-300.0, 300.0),
            ],
        }
    }
}

type Mat3 = [[f64; 3]; 3];

const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

fn rot_x(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

fn rot_y(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
}

fn rot_z(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn apply(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2])
}

/// Local joint rotations for time `t` (seconds).
fn local_rotations(motion: &ClipMotion, t: f64) -> [Mat3; DEFAULT_JOINTS] {
    let w = 2.0 * PI * motion.gait_hz * t + motion.phase;
    let a = motion.amplitude;
    let mut rot = [IDENTITY; DEFAULT_JOINTS];
    match motion.action {
        "Waving" => {
            rot[1] = rot_x(-0.1 * a * w.sin());
            rot[4] = rot_x(0.1 * a * w.sin());
            rot[7] = rot_z(0.08 * (0.5 * w).sin());
            rot[11] = rot_x(-0.2 * a * (0.5 * w).sin());
            rot[12] = rot_x(-0.3);
            // raised right arm, forearm waving side to side
            rot[14] = rot_z(-2.3 - 0.2 * (0.5 * w).sin());
            rot[15] = rot_z(0.6 + 0.5 * (2.0 * w).sin());
        }
        _ => {
            let s = w.sin();
            rot[1] = rot_x(a * s);
            rot[4] = rot_x(-a * s);
            rot[2] = rot_x(0.6 * a * (1.0 - w.cos()));
            rot[5] = rot_x(0.6 * a * (1.0 + w.cos()));
            rot[7] = rot_x(-0.05);
            rot[11] = rot_x(0.7 * a * s);
            rot[14] = rot_x(-0.7 * a * s);
            rot[12] = rot_x(-0.3 - 0.2 * a * (1.0 + s));
            rot[15] = rot_x(-0.3 - 0.2 * a * (1.0 - s));
        }
    }
    rot
}

/// Camera-frame joint positions (mm) at time `t`: x right, y down, z forward.
pub fn pose_at(spec: &SyntheticSceneSpec, motion: &ClipMotion, t: f64) -> [[f64; 3]; DEFAULT_JOINTS] {
    let local = local_rotations(motion, t);
    let w = 2.0 * PI * motion.gait_hz * t + motion.phase;
    let bob = if motion.action == "Walking" { 15.0 * (2.0 * w).cos() } else { 0.0 };
    // body frame (y up, facing the camera) to camera frame
    let body_to_cam = mat_mul(&rot_x(PI), &rot_y(motion.yaw + motion.yaw_rate * t));
    let mut global = [IDENTITY; DEFAULT_JOINTS];
    let mut pos = [[0.0; 3]; DEFAULT_JOINTS];
    global[0] = mat_mul(&body_to_cam, &local[0]);
    pos[0] = [motion.pelvis[0], motion.pelvis[1] - bob, motion.pelvis[2]];
    for j in 1..DEFAULT_JOINTS {
        let p = PARENTS[j].expect("non-root joints have parents");
        let len = spec.limb_lengths[j] * motion.scale;
        let offset = BONE_DIRS[j].map(|d| d * len);
        let step = apply(&global[p], offset);
        pos[j] = [0, 1, 2].map(|k| pos[p][k] + step[k]);
        global[j] = mat_mul(&global[p], &local[j]);
    }
    pos
}

fn limb_color(joint: usize) -> [f64; 3] {
    match joint {
        1..=3 => [200.0, 70.0, 60.0],
        4..=6 => [60.0, 190.0, 80.0],
        7..=10 => [90.0, 120.0, 230.0],
        11..=13 => [230.0, 210.0, 60.0],
        _ => [180.0, 80.0, 200.0],
    }
}

/// Unique marker colour of each joint. Limb blending never reaches full red
/// and blue together, and markers are drawn unblended.
pub fn marker_color(joint: usize) -> Rgb<u8> {
    Rgb([255, (15 * joint) as u8, 255])
}

fn background(y: u32, height: u32) -> [f64; 3] {
    let g = 24.0 + 24.0 * f64::from(y) / f64::from(height);
    [g, g, g + 10.0]
}

/// Coverage-weighted rasterizer that tracks the tight box of touched pixels.
struct Canvas {
    img: RgbImage,
    min: [i64; 2],
    max: [i64; 2],
}

impl Canvas {
    fn new(width: u32, height: u32) -> Self {
        let img = RgbImage::from_fn(width, height, |_, y| {
            Rgb(background(y, height).map(|v| v.round() as u8))
        });
        Self {
            img,
            min: [i64::MAX; 2],
            max: [i64::MIN; 2],
        }
    }

    /// Fill a capsule around segment `a`-`b` (pixel coordinates, pixel
    /// centres at +0.5) with analytic edge coverage.
    fn capsule(&mut self, a: [f64; 2], b: [f64; 2], radius: f64, color: [f64; 3]) {
        let (w, h) = (self.img.width() as i64, self.img.height() as i64);
        let reach = radius + 1.0;
        let x0 = ((a[0].min(b[0]) - reach).floor() as i64).max(0);
        let x1 = ((a[0].max(b[0]) + reach).ceil() as i64).min(w - 1);
        let y0 = ((a[1].min(b[1]) - reach).floor() as i64).max(0);
        let y1 = ((a[1].max(b[1]) + reach).ceil() as i64).min(h - 1);
        let d = [b[0] - a[0], b[1] - a[1]];
        let len2 = d[0] * d[0] + d[1] * d[1];
        for py in y0..=y1 {
            for px in x0..=x1 {
                let p = [px as f64 + 0.5 - a[0], py as f64 + 0.5 - a[1]];
                let t = if len2 > 0.0 {
                    ((p[0] * d[0] + p[1] * d[1]) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let dist = ((p[0] - t * d[0]).powi(2) + (p[1] - t * d[1]).powi(2)).sqrt();
                let coverage = (radius + 0.5 - dist).clamp(0.0, 1.0);
                if coverage <= 0.0 {
                    continue;
                }
                let px_ref = self.img.get_pixel_mut(px as u32, py as u32);
                for c in 0..3 {
                    let old = f64::from(px_ref[c]);
                    px_ref[c] = (old + coverage * (color[c] - old)).round() as u8;
                }
                self.min = [self.min[0].min(px), self.min[1].min(py)];
                self.max = [self.max[0].max(px), self.max[1].max(py)];
            }
        }
    }

    /// Hard-edged disk: no blending, so marker colours stay exact even
    /// where markers overlap.
    fn disk(&mut self, centre: [f64; 2], radius: f64, color: Rgb<u8>) {
        let (w, h) = (self.img.width() as i64, self.img.height() as i64);
        let x0 = ((centre[0] - radius).floor() as i64).max(0);
        let x1 = ((centre[0] + radius).ceil() as i64).min(w - 1);
        let y0 = ((centre[1] - radius).floor() as i64).max(0);
        let y1 = ((centre[1] + radius).ceil() as i64).min(h - 1);
        for py in y0..=y1 {
            for px in x0..=x1 {
                let (dx, dy) = (px as f64 + 0.5 - centre[0], py as f64 + 0.5 - centre[1]);
                if dx * dx + dy * dy <= radius * radius {
                    self.img.put_pixel(px as u32, py as u32, color);
                    self.min = [self.min[0].min(px), self.min[1].min(py)];
                    self.max = [self.max[0].max(px), self.max[1].max(py)];
                }
            }
        }
    }

    fn bbox(&self) -> BBox {
        BBox {
            x: self.min[0],
            y: self.min[1],
            w: (self.max[0] - self.min[0] + 1) as u32,
            h: (self.max[1] - self.min[1] + 1) as u32,
        }
    }
}

/// Render one frame of camera-frame joints; returns the image and the tight
/// box around every drawn pixel. `frame` only labels errors.
pub fn render_frame(
    spec: &SyntheticSceneSpec,
    joints: &[[f64; 3]; DEFAULT_JOINTS],
    frame: usize,
) -> Result<(RgbImage, BBox)> {
    let k = &spec.intrinsics;
    let projected: Vec<[f64; 2]> = joints.iter().map(|&p| k.project(p)).collect();
    let radii: Vec<f64> = joints
        .iter()
        .map(|p| (k.fx * LIMB_RADIUS_MM / p[2]).max(1.0))
        .collect();
    for (j, (uv, p)) in projected.iter().zip(joints).enumerate() {
        let margin = radii[j] + 1.0;
        if p[2] <= 0.0
            || uv[0] - margin < 0.0
            || uv[1] - margin < 0.0
            || uv[0] + margin > f64::from(spec.width)
            || uv[1] + margin > f64::from(spec.height)
        {
            return Err(Error::Scene(format!(
                "skeleton leaves the image at frame {frame} (joint {} at pixel {:.1},{:.1})",
                JOINT_NAMES[j], uv[0], uv[1]
            )));
        }
    }

    let mut canvas = Canvas::new(spec.width, spec.height);
    let mut limbs: Vec<usize> = (1..DEFAULT_JOINTS).collect();
    let depth = |j: usize| joints[j][2] + joints[PARENTS[j].unwrap()][2];
    limbs.sort_by(|&a, &b| depth(b).total_cmp(&depth(a)));
    for j in limbs {
        let p = PARENTS[j].unwrap();
        let r = 0.5 * (radii[j] + radii[p]);
        canvas.capsule(projected[p], projected[j], r, limb_color(j));
    }
    let mut order: Vec<usize> = (0..DEFAULT_JOINTS).collect();
    order.sort_by(|&a, &b| joints[b][2].total_cmp(&joints[a][2]));
    for j in order {
        canvas.disk(projected[j], MARKER_RADIUS_PX, marker_color(j));
    }
    let bbox = canvas.bbox();
    Ok((canvas.img, bbox))
}

/// Generate one clip in memory.
pub fn synth_clip(spec: &SyntheticSceneSpec, index: usize, frames: usize) -> Result<(RawClip, ClipMeta)> {
    spec.validate()?;
    let mut rng = RngState::substream(spec.seed, 1000 + index as u64);
    let motion = ClipMotion::draw(spec, index, &mut rng);
    let poses: Vec<[[f64; 3]; DEFAULT_JOINTS]> =
        (0..frames).map(|f| pose_at(spec, &motion, f as f64 / spec.fps)).collect();
    let rendered = poses
        .par_iter()
        .enumerate()
        .map(|(f, p)| render_frame(spec, p, f))
        .collect::<Result<Vec<_>>>()?;
    let (images, boxes) = rendered.into_iter().unzip();
    let joints = Tensor::from_vec(
        &[frames, DEFAULT_JOINTS, COORDS],
        poses.iter().flatten().flatten().copied().collect(),
    )?;
    let id = format!("clip_{index:04}");
    let clip = RawClip {
        id: id.clone(),
        action: motion.action.to_string(),
        fps: spec.fps,
        frames: images,
        boxes,
        joints,
    };
    let meta = ClipMeta {
        fps: spec.fps,
        intrinsics: spec.intrinsics,
        width: spec.width,
        height: spec.height,
        subject: "synthetic".into(),
        action: motion.action.to_string(),
        joints: DEFAULT_JOINTS,
    };
    Ok((clip, meta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    pub clips: usize,
    pub frames: usize,
    /// The last `val_clips + test_clips` clips are tagged val, then test.
    pub val_clips: usize,
    pub test_clips: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub clips: usize,
    pub frames_per_clip: usize,
    /// Clips with fewer decimated frames than one window.
    pub short_clips: Vec<String>,
}

/// Write a full synthetic dataset to `out`.
pub fn generate_synthetic(spec: &SyntheticSceneSpec, opts: &SynthOptions, out: &Path) -> Result<SynthSummary> {
    spec.validate()?;
    if opts.clips == 0 || opts.frames == 0 {
        return Err(Error::Scene("need at least one clip of at least one frame".into()));
    }
    if opts.val_clips + opts.test_clips > opts.clips {
        return Err(Error::Scene(format!(
            "{} val + {} test clips exceed {} clips",
            opts.val_clips, opts.test_clips, opts.clips
        )));
    }
    let decimated = decimated_indices(opts.frames, decimation_stride(spec.fps, 13.0)).len();
    let mut manifest = Manifest::default();
    let mut short_clips = Vec::new();
    for index in 0..opts.clips {
        let (clip, meta) = synth_clip(spec, index, opts.frames)?;
        write_clip(&out.join(&clip.id), &clip, &meta)?;
        if decimated < WINDOW {
            tracing::warn!(clip = %clip.id, frames = opts.frames, "clip shorter than one window");
            short_clips.push(clip.id.clone());
        }
        let train_end = opts.clips - opts.val_clips - opts.test_clips;
        let split = if index < train_end {
            Split::Train
        } else if index < train_end + opts.val_clips {
            Split::Val
        } else {
            Split::Test
        };
        manifest.clips.push(ManifestEntry {
            id: clip.id.clone(),
            dir: clip.id.clone(),
            split,
            action: clip.action.clone(),
        });
    }
    Dataset::write_manifest(out, &manifest)?;
    Ok(SynthSummary {
        clips: opts.clips,
        frames_per_clip: opts.frames,
        short_clips,
    })
}
